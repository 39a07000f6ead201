use std::time::Instant;

use serde::{Deserialize, Serialize};

use sae_embed::correlations::cooccurrence_counts;
use sae_embed::embedding::build_index;
use sae_embed::synth::zipf_corpus;

use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub d_sae: Option<u32>,
    /// Mean active latents per document.
    #[arg(long)]
    pub mean_active: Option<f64>,
    /// Zipf exponent of latent document frequencies.
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long)]
    pub min_freq: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchParams {
    pub n_docs: usize,
    pub d_sae: u32,
    pub mean_active: f64,
    pub exponent: f64,
    pub min_freq: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOutput {
    pub params: BenchParams,
    pub observed_mean_active: f64,
    pub n_pairs: usize,
    pub total_cooccurrences: u64,
}

/// Peak resident set size in bytes, from /proc (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn run(ctx: &Context, args: &BenchArgs) -> CliResult<()> {
    let mut meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let params = BenchParams {
        n_docs: args.n_docs.unwrap_or(10_000),
        d_sae: args.d_sae.unwrap_or(65_536),
        mean_active: args.mean_active.unwrap_or(300.0),
        exponent: args.exponent.unwrap_or(1.0),
        min_freq: args.min_freq.unwrap_or(0.0),
        seed: ctx.seed(),
    };
    if params.n_docs == 0 || params.d_sae == 0 || !(params.mean_active > 0.0) {
        return Err(CliError::input("n_docs, d_sae and mean_active must be positive"));
    }
    let t0 = Instant::now();
    let idx = {
        let embs = zipf_corpus(
            params.n_docs,
            params.d_sae,
            params.mean_active,
            params.exponent,
            params.seed,
        );
        build_index(&embs)?
    };
    let build_s = t0.elapsed().as_secs_f64();
    let observed = (0..idx.n_docs()).map(|d| idx.active(d).len()).sum::<usize>() as f64 / idx.n_docs() as f64;
    let t1 = Instant::now();
    let counts = cooccurrence_counts(&idx, params.min_freq)?;
    let count_s = t1.elapsed().as_secs_f64();
    let peak = peak_rss_bytes();
    let total: u64 = counts.iter().map(|(_, _, c)| c as u64).sum();
    println!(
        "cooccurrence: {} docs, mean {observed:.1} active, {} pairs in {count_s:.2}s (corpus {build_s:.2}s), peak RSS {}",
        params.n_docs,
        counts.len(),
        peak.map(|b| format!("{:.0} MiB", b as f64 / (1 << 20) as f64))
            .unwrap_or_else(|| "unknown".into())
    );
    meta.measurements.insert("count_seconds".into(), count_s.into());
    meta.measurements.insert("corpus_seconds".into(), build_s.into());
    meta.measurements
        .insert("threads".into(), rayon::current_num_threads().into());
    if let Some(b) = peak {
        meta.measurements.insert("peak_rss_bytes".into(), b.into());
    }
    let result = BenchOutput {
        params,
        observed_mean_active: observed,
        n_pairs: counts.len(),
        total_cooccurrences: total,
    };
    write_report(
        &ctx.out_dir(),
        &Report::new("bench-cooc", ctx.resolved("bench_cooc", args, false), result),
        meta,
    )?;
    Ok(())
}
