mod commands;
mod config;
mod error;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{overlay, Context, FileConfig, GlobalArgs};
use error::{CliError, CliResult};

/// Interpretable document embeddings from sparse-autoencoder activations.
///
/// Exit codes: 0 success, 1 internal failure, 2 input error, 3 gateway failure.
#[derive(Debug, Parser)]
#[command(name = "sae-embed", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Max-pool token activations (or encode hidden states) into an embedding store.
    Embed(commands::EmbedArgs),
    /// Rank latents by document-frequency difference between corpora.
    Diff(commands::DiffArgs),
    /// Mine latent pairs that co-occur more than chance.
    Corr(commands::CorrArgs),
    /// Spectral clustering on binarized embeddings, optionally targeted by keyphrases.
    Cluster(commands::ClusterArgs),
    /// Rank documents for property queries through catalog latents.
    Retrieve(commands::RetrieveArgs),
    /// Generate a synthetic corpus with planted structure.
    Synth(commands::SynthArgs),
    /// Score rankings against judgments and reports against a synthetic ground truth.
    Eval(commands::EvalArgs),
    /// Time co-occurrence counting on a Zipf-distributed corpus.
    BenchCooc(commands::BenchArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context {
        global: overlay(&file.global(), &cli.global)?,
        gateway: file.gateway.clone(),
    };
    if let Some(n) = ctx.global.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Embed(a) => commands::embed(&ctx, &overlay(&file.embed, a)?),
        Command::Diff(a) => commands::diff(&ctx, &overlay(&file.diff, a)?),
        Command::Corr(a) => commands::corr(&ctx, &overlay(&file.corr, a)?),
        Command::Cluster(a) => commands::cluster(&ctx, &overlay(&file.cluster, a)?),
        Command::Retrieve(a) => commands::retrieve(&ctx, &overlay(&file.retrieve, a)?),
        Command::Synth(a) => commands::synth(&ctx, &overlay(&file.synth, a)?),
        Command::Eval(a) => commands::eval(&ctx, &overlay(&file.eval, a)?),
        Command::BenchCooc(a) => commands::bench_cooc(&ctx, &overlay(&file.bench_cooc, a)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sae-embed: {e}");
            ExitCode::from(e.code())
        }
    }
}
