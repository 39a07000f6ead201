use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::retrieval::{
    evaluate, load_qrels, load_queries, score_documents, select_candidate_latents, JudgeReranker, LatentReranker,
    MeanMetrics, DEFAULT_EVAL_K, DEFAULT_K_CANDIDATES, DEFAULT_TEMPERATURE,
};
use sae_embed::{Gateway, RetrievalRanking};

use super::{existing, load_catalog, load_docs, pooled, require};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Queries as JSONL {"query_id", "text", "vec"?}; queries without a
    /// vector are embedded through the gateway.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub k_candidates: Option<usize>,
    /// Softmax temperature over candidate similarities.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Ask the judge to keep only relevant candidate latents.
    #[arg(long)]
    pub rerank: bool,
    /// Keep this many documents per ranking (default: all).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Relevance judgments; adds metrics to the report.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Cutoff for P@K.
    #[arg(long)]
    pub eval_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieveParams {
    pub k_candidates: usize,
    pub temperature: f64,
    pub rerank: bool,
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieveOutput {
    pub params: RetrieveParams,
    pub rankings: Vec<RetrievalRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MeanMetrics>,
}

pub fn run(ctx: &Context, args: &RetrieveArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let k_candidates = args.k_candidates.unwrap_or(DEFAULT_K_CANDIDATES);
    let temperature = args.temperature.unwrap_or(DEFAULT_TEMPERATURE);
    let queries = load_queries(require(&args.queries, "queries")?)?;
    let catalog = load_catalog(require(&args.catalog, "catalog")?, ctx)?;
    let embs = pooled(&load_docs(require(&args.activations, "activations")?)?)?;

    let needs_gateway = args.rerank || queries.iter().any(|q| q.vec.is_none());
    let gateway: Option<Gateway> = if needs_gateway {
        Some(ctx.build_gateway()?)
    } else {
        None
    };
    let reranker = gateway.as_ref().map(|g| JudgeReranker {
        gateway: g,
        max_in_flight: ctx.max_in_flight(),
    });

    let mut rankings = Vec::with_capacity(queries.len());
    for q in &queries {
        let vec = match &q.vec {
            Some(v) => v.clone(),
            None => gateway.as_ref().expect("built above").embed(&q.text)?,
        };
        if let Some(dim) = catalog.dim() {
            if vec.len() != dim {
                return Err(CliError::input(format!(
                    "query {}: vector has {} dims, catalog has {dim}",
                    q.query_id,
                    vec.len()
                )));
            }
        }
        let rerank = match (&reranker, args.rerank) {
            (Some(r), true) => Some((r as &dyn LatentReranker, q.text.as_str())),
            _ => None,
        };
        let candidates = select_candidate_latents(&vec, &catalog, k_candidates, rerank)?;
        let mut r = score_documents(&q.query_id, &embs, &candidates, temperature)?;
        if let Some(d) = args.depth {
            r.ranked_doc_ids.truncate(d);
            r.scores.truncate(d);
        }
        rankings.push(r);
    }
    let metrics = match &args.qrels {
        Some(p) => Some(evaluate(
            &rankings,
            &load_qrels(existing(p)?)?,
            args.eval_k.unwrap_or(DEFAULT_EVAL_K),
        )?),
        None => None,
    };
    match &metrics {
        Some(m) => println!(
            "ranked {} queries, MAP {:.4}, MP@{} {:.4}",
            rankings.len(),
            m.map,
            m.k,
            m.mp_at_k
        ),
        None => println!("ranked {} queries", rankings.len()),
    }
    let result = RetrieveOutput {
        params: RetrieveParams {
            k_candidates,
            temperature,
            rerank: args.rerank,
            depth: args.depth,
        },
        rankings,
        metrics,
    };
    write_report(
        &ctx.out_dir(),
        &Report::new("retrieve", ctx.resolved("retrieve", args, needs_gateway), result),
        meta,
    )?;
    Ok(())
}
