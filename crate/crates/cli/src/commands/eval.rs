use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::retrieval::{
    evaluate, load_qrels, rbo, rrf_fuse, MeanMetrics, DEFAULT_EVAL_K, DEFAULT_K_RRF, DEFAULT_RBO_P,
};
use sae_embed::synth::{evaluate_recovery, RecoveryInputs, RecoveryMetrics};
use sae_embed::{ClusterResult, GroundTruth, RetrievalRanking};

use super::{display, existing, ClusterOutput, CorrOutput, DiffOutput, RetrieveOutput};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{read_json, read_report, unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Retrieve reports; with two or more, RBO and RRF fusion are added.
    #[arg(long, num_args = 1..)]
    pub rankings: Vec<PathBuf>,
    /// Relevance judgments JSONL {"query_id", "doc_id", "relevant"}.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Ground truth written by synth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Corr report to score against the truth.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Diff report to score against the truth.
    #[arg(long)]
    pub diff: Option<PathBuf>,
    /// Cluster reports, one per blocks directive, in spec order.
    #[arg(long, num_args = 1..)]
    pub clusters: Vec<PathBuf>,
    #[arg(long)]
    pub eval_k: Option<usize>,
    #[arg(long)]
    pub rbo_p: Option<f64>,
    #[arg(long)]
    pub k_rrf: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingAgreement {
    pub query_id: String,
    /// RBO between the first rankings file and each of the others.
    pub rbo: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub k: usize,
    pub per_file: Vec<(String, MeanMetrics)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<MeanMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalEval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreement: Vec<RankingAgreement>,
    pub rbo_p: f64,
    /// RBO is the truncated sum to depth k, not extrapolated.
    pub rbo_variant: String,
    pub k_rrf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryMetrics>,
}

fn fuse(sets: &[Vec<RetrievalRanking>], k_rrf: f64) -> CliResult<Vec<RetrievalRanking>> {
    let ids: BTreeSet<&str> = sets[0].iter().map(|r| r.query_id.as_str()).collect();
    let mut fused = Vec::new();
    for q in ids {
        let lists: Vec<Vec<String>> = sets
            .iter()
            .filter_map(|s| s.iter().find(|r| r.query_id == q))
            .map(|r| r.ranked_doc_ids.clone())
            .collect();
        let (ranked_doc_ids, scores) = rrf_fuse(&lists, k_rrf)?.into_iter().unzip();
        fused.push(RetrievalRanking {
            query_id: q.to_string(),
            ranked_doc_ids,
            scores,
            latents_used: Vec::new(),
            all_zero: false,
        });
    }
    Ok(fused)
}

pub fn run(ctx: &Context, args: &EvalArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let k = args.eval_k.unwrap_or(DEFAULT_EVAL_K);
    let rbo_p = args.rbo_p.unwrap_or(DEFAULT_RBO_P);
    let k_rrf = args.k_rrf.unwrap_or(DEFAULT_K_RRF);
    if args.qrels.is_none() && args.truth.is_none() && args.rankings.len() < 2 {
        return Err(CliError::input(
            "nothing to evaluate: pass --qrels, --truth, or two --rankings",
        ));
    }
    let sets: Vec<Vec<RetrievalRanking>> = args
        .rankings
        .iter()
        .map(|p| Ok(read_report::<RetrieveOutput>(existing(p)?, "retrieve")?.result.rankings))
        .collect::<CliResult<_>>()?;

    let mut retrieval = None;
    if let Some(q) = &args.qrels {
        if sets.is_empty() {
            return Err(CliError::input("--qrels needs --rankings"));
        }
        let qrels = load_qrels(existing(q)?)?;
        let mut per_file = Vec::new();
        for (p, s) in args.rankings.iter().zip(&sets) {
            per_file.push((display(p), evaluate(s, &qrels, k)?));
        }
        let fused = if sets.len() >= 2 {
            Some(evaluate(&fuse(&sets, k_rrf)?, &qrels, k)?)
        } else {
            None
        };
        retrieval = Some(RetrievalEval { k, per_file, fused });
    }

    let mut agreement = Vec::new();
    if sets.len() >= 2 {
        for r in &sets[0] {
            let mut values = Vec::new();
            for other in &sets[1..] {
                let o = other
                    .iter()
                    .find(|x| x.query_id == r.query_id)
                    .ok_or_else(|| CliError::input(format!("query {} missing from a rankings file", r.query_id)))?;
                values.push(rbo(&r.ranked_doc_ids, &o.ranked_doc_ids, rbo_p, k)?);
            }
            agreement.push(RankingAgreement {
                query_id: r.query_id.clone(),
                rbo: values,
            });
        }
    }

    let mut recovery = None;
    if let Some(t) = &args.truth {
        let truth: GroundTruth = read_json(existing(t)?)?;
        let pairs: Option<Vec<(u32, u32)>> = match &args.pairs {
            Some(p) => Some(
                read_report::<CorrOutput>(existing(p)?, "corr")?
                    .result
                    .pairs
                    .iter()
                    .map(|x| (x.stats.i, x.stats.j))
                    .collect(),
            ),
            None => None,
        };
        let diff = match &args.diff {
            Some(p) => Some(read_report::<DiffOutput>(existing(p)?, "diff")?.result.entries),
            None => None,
        };
        let clusters: Vec<ClusterResult> = args
            .clusters
            .iter()
            .map(|p| Ok(read_report::<ClusterOutput>(existing(p)?, "cluster")?.result.clustering))
            .collect::<CliResult<_>>()?;
        let inputs = RecoveryInputs {
            pairs: pairs.as_deref(),
            diff: diff.as_deref(),
            clusters: (!clusters.is_empty()).then_some(clusters.as_slice()),
            rankings: sets.first().map(Vec::as_slice),
        };
        recovery = Some(evaluate_recovery(inputs, &truth)?);
    }

    if let Some(r) = &retrieval {
        for (p, m) in &r.per_file {
            println!("{p}: MAP {:.4}, MP@{} {:.4}", m.map, m.k, m.mp_at_k);
        }
    }
    if let Some(m) = &recovery {
        println!(
            "recovery: pair precision {:?}, recall {:?}, diff ranks {:?}, ARI {:?}, MAP {:?}",
            m.pair_precision, m.pair_recall, m.diff_ranks, m.cluster_ari, m.map
        );
    }
    let result = EvalOutput {
        retrieval,
        agreement,
        rbo_p,
        rbo_variant: "truncated".into(),
        k_rrf,
        recovery,
    };
    write_report(
        &ctx.out_dir(),
        &Report::new("eval", ctx.resolved("eval", args, false), result),
        meta,
    )?;
    Ok(())
}
