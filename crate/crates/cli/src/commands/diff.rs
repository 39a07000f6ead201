use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::diff::{attach_labels, diff_one_vs_rest, top_diff_latents, DEFAULT_MIN_DELTA, DEFAULT_TOP_N};
use sae_embed::embedding::build_index;
use sae_embed::DiffEntry;

use super::{binary, display, load_catalog, load_docs, pooled};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct DiffArgs {
    /// Corpora to compare; the first is the target, the rest are the others.
    #[arg(long, num_args = 1..)]
    pub activations: Vec<PathBuf>,
    /// Catalog used to attach labels.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Minimum absolute frequency difference.
    #[arg(long)]
    pub min_delta: Option<f64>,
    /// Keep this many entries.
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffOutput {
    pub target: String,
    pub others: Vec<String>,
    pub min_delta: f64,
    pub top_n: usize,
    pub n_significant: usize,
    pub entries: Vec<DiffEntry>,
}

pub fn run(ctx: &Context, args: &DiffArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    if args.activations.len() < 2 {
        return Err(CliError::input("diff needs at least two --activations files"));
    }
    let min_delta = args.min_delta.unwrap_or(DEFAULT_MIN_DELTA);
    let top_n = args.top_n.unwrap_or(DEFAULT_TOP_N);
    let mut indexes = Vec::new();
    for p in &args.activations {
        indexes.push(build_index(&binary(&pooled(&load_docs(p)?)?))?);
    }
    let others: Vec<_> = indexes[1..].iter().collect();
    let all = diff_one_vs_rest(&indexes[0], &others, min_delta)?;
    let mut entries = top_diff_latents(&all, top_n);
    if let Some(c) = &args.catalog {
        attach_labels(&mut entries, &load_catalog(c, ctx)?);
    }
    println!("{} latents differ by at least {min_delta}", all.len());
    let result = DiffOutput {
        target: display(&args.activations[0]),
        others: args.activations[1..].iter().map(|p| display(p)).collect(),
        min_delta,
        top_n,
        n_significant: all.len(),
        entries,
    };
    write_report(
        &ctx.out_dir(),
        &Report::new("diff", ctx.resolved("diff", args, false), result),
        meta,
    )?;
    Ok(())
}
