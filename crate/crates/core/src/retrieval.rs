//! Property-based retrieval: candidate latents chosen by label similarity,
//! documents scored by a temperature-weighted sum of their activations.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::LatentCatalog;
use crate::embedding::SaeEmbedding;
use crate::error::{Error, Result};
use crate::formats::jsonl_records;
use crate::gateway::{AnnotationTask, Exhibit, Gateway, TaskKind, TaskPayload};

pub const DEFAULT_K_CANDIDATES: usize = 50;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_K_RRF: f64 = 60.0;
pub const DEFAULT_RBO_P: f64 = 0.98;
pub const DEFAULT_EVAL_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRanking {
    pub query_id: String,
    pub ranked_doc_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub latents_used: Vec<(u32, f64)>,
    /// Every candidate latent is inactive across the whole corpus.
    #[serde(default)]
    pub all_zero: bool,
}

/// Picks the subset of candidate latents relevant to a query, in order of
/// preference.
pub trait LatentReranker {
    fn rerank(&self, query: &str, candidates: &[(u32, f64)], catalog: &LatentCatalog) -> Result<Vec<u32>>;
}

/// Reranks by asking the judge, once per candidate, whether the latent's
/// label is relevant to the query. Kept latents retain their similarity order.
pub struct JudgeReranker<'a> {
    pub gateway: &'a Gateway,
    pub max_in_flight: usize,
}

pub fn relevance_task(query: &str, label: &str) -> AnnotationTask {
    let property = format!("describes a feature that would help find texts matching: {query}");
    let mut payload = TaskPayload::default()
        .with_query(property)
        .with_param("purpose", "rerank");
    payload.exhibits.push(Exhibit::new("feature", label));
    AnnotationTask::new(TaskKind::Judge, payload)
}

impl LatentReranker for JudgeReranker<'_> {
    fn rerank(&self, query: &str, candidates: &[(u32, f64)], catalog: &LatentCatalog) -> Result<Vec<u32>> {
        let tasks: Vec<AnnotationTask> = candidates
            .iter()
            .map(|&(l, _)| relevance_task(query, catalog.label(l).unwrap_or("")))
            .collect();
        let results = self.gateway.submit_batch(&tasks, self.max_in_flight);
        let mut keep = Vec::new();
        for (&(l, _), r) in candidates.iter().zip(results) {
            if r?.judgment() == Some(true) {
                keep.push(l);
            }
        }
        Ok(keep)
    }
}

/// Top `k_candidates` latents by label/query cosine, optionally narrowed by a
/// reranker whose answer must be a duplicate-free subset of the candidates.
pub fn select_candidate_latents(
    query_vec: &[f32],
    catalog: &LatentCatalog,
    k_candidates: usize,
    rerank: Option<(&dyn LatentReranker, &str)>,
) -> Result<Vec<(u32, f64)>> {
    let candidates = catalog.top_k_latents(query_vec, k_candidates)?;
    let Some((reranker, query)) = rerank else {
        return Ok(candidates);
    };
    let chosen = reranker.rerank(query, &candidates, catalog)?;
    let sims: HashMap<u32, f64> = candidates.iter().copied().collect();
    let mut seen = HashSet::new();
    let offending: Vec<u32> = chosen
        .iter()
        .copied()
        .filter(|l| !sims.contains_key(l) || !seen.insert(*l))
        .collect();
    if !offending.is_empty() {
        return Err(Error::invalid(format!(
            "rerank returned latents outside the candidate set or repeated: {offending:?}"
        )));
    }
    Ok(chosen.into_iter().map(|l| (l, sims[&l])).collect())
}

/// Softmax of `sims / t`.
pub fn softmax_weights(sims: &[f64], t: f64) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = sims.iter().map(|s| ((s - max) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Orders `(doc_id, score)` by score descending, ties by doc id.
fn sort_ranked(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Ranks every document by `Σ w_i · v_d,i / max_d' v_d',i` with softmax
/// weights over the candidates' similarities at temperature `t`.
pub fn score_documents(
    query_id: &str,
    embs: &[SaeEmbedding],
    candidates: &[(u32, f64)],
    t: f64,
) -> Result<RetrievalRanking> {
    if candidates.is_empty() {
        return Err(Error::invalid("at least one candidate latent is required"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    let sims: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    let weights = softmax_weights(&sims, t);
    let latents: Vec<u32> = candidates.iter().map(|c| c.0).collect();
    let maxima: Vec<f64> = latents
        .iter()
        .map(|&l| {
            embs.par_iter()
                .map(|e| e.value(l).unwrap_or(0.0) as f64)
                .reduce(|| 0.0, f64::max)
        })
        .collect();
    let all_zero = maxima.iter().all(|&m| m == 0.0);
    if all_zero {
        log::warn!("query {query_id}: no candidate latent is active anywhere in the corpus");
    }
    let mut scored: Vec<(String, f64)> = embs
        .par_iter()
        .map(|e| {
            let s = latents
                .iter()
                .zip(&weights)
                .zip(&maxima)
                .filter(|(_, &m)| m > 0.0)
                .map(|((&l, &w), &m)| w * e.value(l).unwrap_or(0.0) as f64 / m)
                .sum();
            (e.doc_id.clone(), s)
        })
        .collect();
    sort_ranked(&mut scored);
    let (ranked_doc_ids, scores) = scored.into_iter().unzip();
    Ok(RetrievalRanking {
        query_id: query_id.to_string(),
        ranked_doc_ids,
        scores,
        latents_used: latents.into_iter().zip(weights).collect(),
        all_zero,
    })
}

/// Mean over relevant hits of precision at the hit's rank, divided by the
/// total number of relevant documents (retrieved or not).
pub fn average_precision(flags: &[bool], n_relevant: usize) -> Result<f64> {
    if n_relevant == 0 {
        return Err(Error::invalid("average precision needs at least one relevant document"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits > n_relevant {
        return Err(Error::invalid(format!(
            "{hits} relevant flags but n_relevant = {n_relevant}"
        )));
    }
    Ok(sum / n_relevant as f64)
}

/// Hits in the first `k` positions over `k`; missing positions count as misses.
pub fn precision_at_k(flags: &[bool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    Ok(flags.iter().take(k).filter(|&&f| f).count() as f64 / k as f64)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot average an empty list"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ap: f64,
    pub p_at_k: f64,
    pub n_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub k: usize,
    pub map: f64,
    pub mp_at_k: f64,
    pub per_query: Vec<QueryMetrics>,
}

pub fn mean_metrics(per_query: Vec<QueryMetrics>, k: usize) -> Result<MeanMetrics> {
    let aps: Vec<f64> = per_query.iter().map(|q| q.ap).collect();
    let ps: Vec<f64> = per_query.iter().map(|q| q.p_at_k).collect();
    Ok(MeanMetrics {
        k,
        map: mean(&aps)?,
        mp_at_k: mean(&ps)?,
        per_query,
    })
}

pub fn evaluate_ranking(ranking: &RetrievalRanking, relevant: &BTreeSet<String>, k: usize) -> Result<QueryMetrics> {
    let flags: Vec<bool> = ranking.ranked_doc_ids.iter().map(|d| relevant.contains(d)).collect();
    Ok(QueryMetrics {
        query_id: ranking.query_id.clone(),
        ap: average_precision(&flags, relevant.len())?,
        p_at_k: precision_at_k(&flags, k)?,
        n_relevant: relevant.len(),
    })
}

/// Rankings are matched to judgments by query id; queries with no relevant
/// documents are skipped with a warning.
pub fn evaluate(
    rankings: &[RetrievalRanking],
    qrels: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<MeanMetrics> {
    let mut per_query = Vec::new();
    for r in rankings {
        match qrels.get(&r.query_id) {
            Some(rel) if !rel.is_empty() => per_query.push(evaluate_ranking(r, rel, k)?),
            _ => log::warn!("query {}: no relevant documents judged, skipped", r.query_id),
        }
    }
    mean_metrics(per_query, k)
}

/// Reciprocal rank fusion: `Σ_r 1 / (k_rrf + rank_r(d))` with 1-based ranks;
/// a document absent from a ranking gets nothing from it.
pub fn rrf_fuse(rankings: &[Vec<String>], k_rrf: f64) -> Result<Vec<(String, f64)>> {
    if rankings.is_empty() {
        return Err(Error::invalid("no rankings to fuse"));
    }
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for r in rankings {
        for (i, d) in r.iter().enumerate() {
            *scores.entry(d.as_str()).or_default() += 1.0 / (k_rrf + (i + 1) as f64);
        }
    }
    let mut out: Vec<(String, f64)> = scores.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
    sort_ranked(&mut out);
    Ok(out)
}

/// Truncated rank-biased overlap, normalized so identical prefixes score 1.
/// The evaluation depth is capped at the longer list's length.
pub fn rbo(a: &[String], b: &[String], p: f64, depth: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("rbo persistence p must be in (0, 1), got {p}")));
    }
    if depth == 0 {
        return Err(Error::invalid("rbo depth must be >= 1"));
    }
    for list in [a, b] {
        if list.iter().collect::<HashSet<_>>().len() != list.len() {
            return Err(Error::invalid("rbo rankings must not repeat documents"));
        }
    }
    let depth = depth.min(a.len().max(b.len()));
    if depth == 0 {
        return Ok(1.0);
    }
    let (mut seen_a, mut seen_b) = (HashSet::new(), HashSet::new());
    let mut overlap = 0usize;
    let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
    for d in 0..depth {
        let x = a.get(d);
        let y = b.get(d);
        if let (Some(x), Some(y)) = (x, y) {
            if x == y {
                overlap += 1;
            }
        }
        if let Some(x) = x {
            if seen_b.contains(x) && y != Some(x) {
                overlap += 1;
            }
            seen_a.insert(x);
        }
        if let Some(y) = y {
            if seen_a.contains(y) && x != Some(y) {
                overlap += 1;
            }
            seen_b.insert(y);
        }
        num += w * overlap as f64 / (d + 1) as f64;
        den += w;
        w *= p;
    }
    Ok(num / den)
}

/// Average precision rescaled against the base rate `f`.
pub fn nap(ap: f64, f: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&f) {
        return Err(Error::invalid(format!("base rate must be in [0, 1), got {f}")));
    }
    Ok((ap - f) / (1.0 - f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vec: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qrel {
    pub query_id: String,
    pub doc_id: String,
    pub relevant: u8,
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, q) in jsonl_records::<Query>(path.as_ref())? {
        if !seen.insert(q.query_id.clone()) {
            return Err(Error::Line {
                line,
                message: format!("duplicate query id {:?}", q.query_id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// Relevant doc ids per query.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (line, q) in jsonl_records::<Qrel>(path.as_ref())? {
        let set = out.entry(q.query_id).or_default();
        match q.relevant {
            0 => {}
            1 => {
                set.insert(q.doc_id);
            }
            v => {
                return Err(Error::Line {
                    line,
                    message: format!("relevant must be 0 or 1, got {v}"),
                })
            }
        }
    }
    Ok(out)
}
