use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::correlations::find_correlated_pairs;
use sae_embed::embedding::build_index;
use sae_embed::{CorrelationParams, PairStats};

use super::{binary, load_catalog, load_docs, pooled, require};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct CorrArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Threshold preset: real-world (default) or injection.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub npmi_min: Option<f64>,
    #[arg(long)]
    pub sim_max: Option<f64>,
    #[arg(long)]
    pub min_freq: Option<f64>,
    /// Maximum share of same-or-adjacent-token co-activations.
    #[arg(long)]
    pub trivial_max: Option<f64>,
    /// Co-occurring documents examined per pair by the trivial filter.
    #[arg(long)]
    pub trivial_sample: Option<usize>,
    /// Latents to leave out of pairing.
    #[arg(long, num_args = 1..)]
    pub exclude: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledPair {
    #[serde(flatten)]
    pub stats: PairStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrOutput {
    pub params: CorrelationParams,
    pub n_docs: usize,
    pub pairs: Vec<LabeledPair>,
}

fn params(args: &CorrArgs, lenient: bool) -> CliResult<CorrelationParams> {
    let mut p = match args.preset.as_deref() {
        None | Some("real-world") => CorrelationParams::real_world(),
        Some("injection") => CorrelationParams::injection(),
        Some(other) => return Err(CliError::input(format!("unknown preset {other:?}"))),
    };
    if let Some(v) = args.npmi_min {
        p.npmi_min = v;
    }
    if let Some(v) = args.sim_max {
        p.sim_max = v;
    }
    if let Some(v) = args.min_freq {
        p.min_freq = v;
    }
    if let Some(v) = args.trivial_max {
        p.trivial_max = v;
    }
    if let Some(v) = args.trivial_sample {
        p.trivial_sample = v;
    }
    p.exclude = args.exclude.iter().copied().collect();
    p.lenient = lenient;
    Ok(p)
}

pub fn run(ctx: &Context, args: &CorrArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let params = params(args, ctx.global.lenient)?;
    let docs = load_docs(require(&args.activations, "activations")?)?;
    let catalog = load_catalog(require(&args.catalog, "catalog")?, ctx)?;
    let idx = build_index(&binary(&pooled(&docs)?))?;
    let found = find_correlated_pairs(&idx, &catalog, &params, Some(&docs))?;
    println!("{} correlated pairs", found.len());
    let pairs = found
        .into_iter()
        .map(|stats| {
            let labels = catalog
                .label(stats.i)
                .zip(catalog.label(stats.j))
                .map(|(a, b)| (a.to_string(), b.to_string()));
            LabeledPair { stats, labels }
        })
        .collect();
    let result = CorrOutput {
        params,
        n_docs: idx.n_docs(),
        pairs,
    };
    write_report(
        &ctx.out_dir(),
        &Report::new("corr", ctx.resolved("corr", args, false), result),
        meta,
    )?;
    Ok(())
}
