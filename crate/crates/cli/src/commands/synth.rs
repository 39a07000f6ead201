use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::formats::{save_activations, write_jsonl, DenseVector};
use sae_embed::retrieval::{Qrel, Query};
use sae_embed::synth::generate;
use sae_embed::SynthSpec;

use super::require;
use crate::config::Context;
use crate::error::CliResult;
use crate::report::{ensure_dir, read_json, unix_now, write_json, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// Generation spec (JSON); --seed overrides its seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOutputReport {
    pub spec: SynthSpec,
    pub datasets: Vec<DatasetFile>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub name: String,
    pub file: String,
    pub n_docs: usize,
}

pub fn run(ctx: &Context, args: &SynthArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let mut spec: SynthSpec = read_json(require(&args.spec, "spec")?)?;
    if let Some(s) = ctx.global.seed {
        spec.seed = s;
    }
    let out = generate(&spec)?;
    let dir = ctx.out_dir();
    ensure_dir(&dir)?;

    let mut datasets = Vec::new();
    for d in &out.datasets {
        let file = format!("{}.saea", d.name);
        save_activations(dir.join(&file), spec.d_sae, &d.docs)?;
        datasets.push(DatasetFile {
            name: d.name.clone(),
            file,
            n_docs: d.docs.len(),
        });
    }
    let mut files = vec!["catalog.jsonl".to_string(), "truth.json".to_string()];
    out.catalog.save(dir.join("catalog.jsonl"))?;
    write_json(&dir.join("truth.json"), &out.truth)?;
    if !out.truth.relevance.is_empty() {
        let queries: Vec<Query> = out
            .truth
            .relevance
            .iter()
            .map(|r| Query {
                query_id: r.query_id.clone(),
                text: out.catalog.label(r.latent).unwrap_or_default().to_string(),
                vec: out.catalog.vector(r.latent).map(<[f32]>::to_vec),
            })
            .collect();
        let qrels: Vec<Qrel> = out
            .truth
            .relevance
            .iter()
            .flat_map(|r| {
                r.relevant.iter().map(|d| Qrel {
                    query_id: r.query_id.clone(),
                    doc_id: d.clone(),
                    relevant: 1,
                })
            })
            .collect();
        write_jsonl(dir.join("queries.jsonl"), &queries)?;
        write_jsonl(dir.join("qrels.jsonl"), &qrels)?;
        files.extend(["queries.jsonl".to_string(), "qrels.jsonl".to_string()]);
    }
    if !out.truth.blocks.is_empty() {
        let axes: Vec<DenseVector> = out
            .truth
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| DenseVector {
                id: format!("blocks-{i}"),
                vec: b.axis.clone(),
            })
            .collect();
        write_jsonl(dir.join("axes.jsonl"), &axes)?;
        files.push("axes.jsonl".into());
    }
    println!(
        "generated {} dataset(s) of {} docs into {}",
        datasets.len(),
        spec.n_docs,
        dir.display()
    );
    let result = SynthOutputReport { spec, datasets, files };
    write_report(
        &dir,
        &Report::new("synth", ctx.resolved("synth", args, false), result),
        meta,
    )?;
    Ok(())
}
