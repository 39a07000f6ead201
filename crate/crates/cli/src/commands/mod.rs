mod bench;
mod cluster;
mod corr;
mod diff;
mod embed;
mod eval;
mod retrieve;
mod synth;

use std::path::{Path, PathBuf};

use sae_embed::embedding::{binarize, pool_corpus};
use sae_embed::formats::read_activations;
use sae_embed::{BinaryEmbedding, DocActivations, LatentCatalog, LoadMode, SaeEmbedding};

use crate::config::Context;
use crate::error::{CliError, CliResult};

pub use bench::{run as bench_cooc, BenchArgs};
pub use cluster::{run as cluster, ClusterArgs, ClusterOutput};
pub use corr::{run as corr, CorrArgs, CorrOutput};
pub use diff::{run as diff, DiffArgs, DiffOutput};
pub use embed::{run as embed, EmbedArgs};
pub use eval::{run as eval, EvalArgs};
pub use retrieve::{run as retrieve, RetrieveArgs, RetrieveOutput};
pub use synth::{run as synth, SynthArgs};

pub(crate) fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::input(format!("--{flag} is required")))?;
    existing(p)
}

pub(crate) fn existing(p: &Path) -> CliResult<&Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::input(format!("{}: no such file", p.display())))
    }
}

pub(crate) fn load_docs(path: &Path) -> CliResult<Vec<DocActivations>> {
    Ok(read_activations(existing(path)?)?)
}

pub(crate) fn load_catalog(path: &Path, ctx: &Context) -> CliResult<LatentCatalog> {
    let mode = if ctx.global.lenient {
        LoadMode::Lenient
    } else {
        LoadMode::Strict
    };
    let (cat, warnings) = LatentCatalog::load(existing(path)?, mode)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(cat)
}

pub(crate) fn pooled(docs: &[DocActivations]) -> CliResult<Vec<SaeEmbedding>> {
    Ok(pool_corpus(docs)?)
}

pub(crate) fn binary(embs: &[SaeEmbedding]) -> Vec<BinaryEmbedding> {
    embs.iter().map(binarize).collect()
}

pub(crate) fn display(p: &Path) -> String {
    p.display().to_string()
}
