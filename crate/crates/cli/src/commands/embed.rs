use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sae_embed::formats::{save_activations, save_embeddings, ActivationReader};
use sae_embed::{DocActivations, SaeWeights};

use super::{display, existing, pooled};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedArgs {
    /// Token activations (SAEA binary or JSONL).
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Hidden states as JSONL {"id", "tokens": [[f32; d_model], ...]}; needs --weights.
    #[arg(long)]
    pub hidden: Option<PathBuf>,
    /// SAE weights container used to encode --hidden.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedOutput {
    pub source: String,
    pub store: String,
    pub d_sae: u32,
    pub n_docs: usize,
    pub mean_active_latents: f64,
}

#[derive(Deserialize)]
struct HiddenDoc {
    id: String,
    tokens: Vec<Vec<f32>>,
}

fn encode_hidden(path: &Path, w: &SaeWeights) -> CliResult<Vec<DocActivations>> {
    let file = std::fs::File::open(existing(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut raw = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: HiddenDoc = serde_json::from_str(&line)
            .map_err(|e| CliError::input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        raw.push((i + 1, doc));
    }
    raw.par_iter()
        .map(|(line, doc)| {
            let tokens = doc
                .tokens
                .iter()
                .enumerate()
                .map(|(t, x)| w.encode_token(t as u32, x))
                .collect::<sae_embed::Result<Vec<_>>>()
                .map_err(|e| CliError::input(format!("{} line {line}: {e}", path.display())))?;
            Ok(DocActivations {
                doc_id: doc.id.clone(),
                tokens,
            })
        })
        .collect()
}

pub fn run(ctx: &Context, args: &EmbedArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let out = ctx.out_dir();
    crate::report::ensure_dir(&out)?;
    let (docs, d_sae, source) = match (&args.activations, &args.hidden) {
        (Some(a), None) => {
            let reader = ActivationReader::open(existing(a)?)?;
            let declared = reader.d_sae();
            let docs: Vec<DocActivations> = reader.collect::<sae_embed::Result<_>>()?;
            let d_sae = declared.unwrap_or_else(|| {
                docs.iter()
                    .flat_map(|d| d.tokens.iter().flat_map(|t| t.entries.iter().map(|e| e.0 + 1)))
                    .max()
                    .unwrap_or(0)
            });
            (docs, d_sae, display(a))
        }
        (None, Some(h)) => {
            let wpath = args
                .weights
                .as_deref()
                .ok_or_else(|| CliError::input("--hidden requires --weights"))?;
            let w = SaeWeights::load(existing(wpath)?)?;
            let docs = encode_hidden(h, &w)?;
            let d_sae = u32::try_from(w.d_sae).map_err(|_| CliError::input("d_sae exceeds u32"))?;
            save_activations(out.join("activations.saea"), d_sae, &docs)?;
            (docs, d_sae, display(h))
        }
        (Some(_), Some(_)) => return Err(CliError::input("pass either --activations or --hidden, not both")),
        (None, None) => return Err(CliError::input("--activations or --hidden is required")),
    };
    let embs = pooled(&docs)?;
    let store = out.join("embeddings.saea");
    save_embeddings(&store, d_sae, &embs)?;
    let mean = if embs.is_empty() {
        0.0
    } else {
        embs.iter().map(|e| e.nnz()).sum::<usize>() as f64 / embs.len() as f64
    };
    println!("embedded {} docs, mean active latents {mean:.2}", embs.len());
    let result = EmbedOutput {
        source,
        store: "embeddings.saea".into(),
        d_sae,
        n_docs: embs.len(),
        mean_active_latents: mean,
    };
    write_report(
        &out,
        &Report::new("embed", ctx.resolved("embed", args, false), result),
        meta,
    )?;
    Ok(())
}
