//! Synthetic corpora with planted structure and recovery scoring.
//!
//! Plants act on activations directly. Every document draws from its own
//! ChaCha stream keyed by (dataset, ordinal), so output does not depend on
//! the thread count.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{LatentCatalog, LatentCatalogEntry};
use crate::clustering::{ari_against, ClusterResult};
use crate::diff::DiffEntry;
use crate::embedding::{BinaryEmbedding, DocActivations};
use crate::error::{Error, Result};
use crate::retrieval::{evaluate_ranking, mean, RetrievalRanking};
use crate::sae::TokenActivationRecord;

const VALUE_MIN: f64 = 0.1;
const VALUE_MAX: f64 = 5.0;
const AXIS_JITTER: f64 = 0.3;

fn default_label_dim() -> usize {
    64
}

fn default_tokens() -> u32 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Plant {
    /// Latent active with `rate_a` in dataset A and `rate_b` in dataset B.
    Diff { latent: u32, rate_a: f64, rate_b: f64 },
    /// Both latents active in a `joint_rate` share of documents; each is
    /// active alone often enough to reach its marginal (default: the joint
    /// rate). Labels get cosine `label_sim`.
    Pair {
        i: u32,
        j: u32,
        joint_rate: f64,
        label_sim: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        marginal_i: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        marginal_j: Option<f64>,
    },
    /// Every document joins one of `k` blocks and carries that block's
    /// latents; each bit of the `k * latents_per_block` range then flips with
    /// probability `noise`. Labels of all block latents lie near one axis.
    Blocks {
        first_latent: u32,
        k: usize,
        latents_per_block: u32,
        noise: f64,
    },
    /// Latent active in exactly `n_relevant` randomly chosen documents.
    Relevance { latent: u32, n_relevant: usize },
}

impl Plant {
    fn latents(&self) -> Vec<u32> {
        match *self {
            Plant::Diff { latent, .. } | Plant::Relevance { latent, .. } => vec![latent],
            Plant::Pair { i, j, .. } => vec![i, j],
            Plant::Blocks {
                first_latent,
                k,
                latents_per_block,
                ..
            } => (first_latent..first_latent + k as u32 * latents_per_block).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Documents per dataset.
    pub n_docs: usize,
    pub d_sae: u32,
    /// Per-document probability of each non-planted latent.
    pub background_rate: f64,
    pub plants: Vec<Plant>,
    pub seed: u64,
    #[serde(default = "default_label_dim")]
    pub label_dim: usize,
    #[serde(default = "default_tokens")]
    pub tokens_per_doc: u32,
}

impl SynthSpec {
    pub fn new(n_docs: usize, d_sae: u32, background_rate: f64, seed: u64) -> Self {
        Self {
            n_docs,
            d_sae,
            background_rate,
            plants: Vec::new(),
            seed,
            label_dim: default_label_dim(),
            tokens_per_doc: default_tokens(),
        }
    }

    pub fn with_plant(mut self, p: Plant) -> Self {
        self.plants.push(p);
        self
    }

    fn has_diff(&self) -> bool {
        self.plants.iter().any(|p| matches!(p, Plant::Diff { .. }))
    }

    pub fn dataset_names(&self) -> Vec<&'static str> {
        if self.has_diff() {
            vec!["A", "B"]
        } else {
            vec!["main"]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_docs == 0 {
            return bad("n_docs must be >= 1".into());
        }
        if self.tokens_per_doc < 2 {
            return bad("tokens_per_doc must be >= 2".into());
        }
        if self.label_dim < 2 {
            return bad("label_dim must be >= 2".into());
        }
        let rate = |name: &str, r: f64| -> Result<()> {
            if (0.0..=1.0).contains(&r) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {r} outside [0, 1]")))
            }
        };
        rate("background_rate", self.background_rate)?;
        let mut used = BTreeSet::new();
        for p in &self.plants {
            for l in p.latents() {
                if l >= self.d_sae {
                    return bad(format!("planted latent {l} >= d_sae {}", self.d_sae));
                }
                if !used.insert(l) {
                    return bad(format!("latent {l} used by more than one plant"));
                }
            }
            match *p {
                Plant::Diff { rate_a, rate_b, .. } => {
                    rate("rate_a", rate_a)?;
                    rate("rate_b", rate_b)?;
                }
                Plant::Pair {
                    joint_rate,
                    label_sim,
                    marginal_i,
                    marginal_j,
                    ..
                } => {
                    rate("joint_rate", joint_rate)?;
                    let mi = marginal_i.unwrap_or(joint_rate);
                    let mj = marginal_j.unwrap_or(joint_rate);
                    rate("marginal_i", mi)?;
                    rate("marginal_j", mj)?;
                    if joint_rate > mi || joint_rate > mj {
                        return bad(format!("joint_rate {joint_rate} exceeds a marginal ({mi}, {mj})"));
                    }
                    if mi + mj - joint_rate > 1.0 + 1e-12 {
                        return bad("pair marginals cannot both be met".into());
                    }
                    if !(-1.0..=1.0).contains(&label_sim) {
                        return bad(format!("label_sim {label_sim} outside [-1, 1]"));
                    }
                }
                Plant::Blocks {
                    k,
                    latents_per_block,
                    noise,
                    ..
                } => {
                    if k < 2 || latents_per_block == 0 {
                        return bad("blocks need k >= 2 and latents_per_block >= 1".into());
                    }
                    rate("noise", noise)?;
                }
                Plant::Relevance { n_relevant, .. } => {
                    if n_relevant == 0 || n_relevant > self.n_docs {
                        return bad(format!("n_relevant {n_relevant} must be in [1, {}]", self.n_docs));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffTruth {
    pub latent: u32,
    pub rate_a: f64,
    pub rate_b: f64,
    pub freq_a: f64,
    pub freq_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTruth {
    pub i: u32,
    pub j: u32,
    pub joint_rate: f64,
    pub label_sim: f64,
    pub n_i: usize,
    pub n_j: usize,
    pub n_ij: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksTruth {
    pub first_latent: u32,
    pub k: usize,
    pub latents_per_block: u32,
    /// Label direction shared by the block latents; usable as a keyphrase.
    pub axis: Vec<f32>,
    pub assignment: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTruth {
    pub latent: u32,
    pub query_id: String,
    pub relevant: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub datasets: Vec<String>,
    pub diffs: Vec<DiffTruth>,
    pub pairs: Vec<PairTruth>,
    pub blocks: Vec<BlocksTruth>,
    pub relevance: Vec<RelevanceTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub docs: Vec<DocActivations>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub datasets: Vec<SynthDataset>,
    pub truth: GroundTruth,
    pub catalog: LatentCatalog,
}

fn doc_rng(seed: u64, dataset: usize, ordinal: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((dataset as u64) << 48) | ordinal as u64);
    r
}

fn log_uniform(rng: &mut impl Rng) -> f32 {
    (VALUE_MIN.ln() + rng.random::<f64>() * (VALUE_MAX.ln() - VALUE_MIN.ln())).exp() as f32
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Unit vector with cosine exactly `sim` to the unit vector `a`.
fn with_cosine(rng: &mut impl Rng, a: &[f64], sim: f64) -> Vec<f64> {
    let r = random_unit(rng, a.len());
    let proj: f64 = r.iter().zip(a).map(|(x, y)| x * y).sum();
    let ortho = normalize(&r.iter().zip(a).map(|(x, y)| x - proj * y).collect::<Vec<_>>());
    let s = (1.0 - sim * sim).max(0.0).sqrt();
    normalize(&a.iter().zip(&ortho).map(|(x, o)| sim * x + s * o).collect::<Vec<_>>())
}

fn build_catalog(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<(LatentCatalog, Vec<Vec<f32>>)> {
    let dim = spec.label_dim;
    let mut vecs: Vec<Vec<f64>> = (0..spec.d_sae).map(|_| random_unit(rng, dim)).collect();
    let mut labels: Vec<String> = (0..spec.d_sae).map(|l| format!("background latent {l}")).collect();
    let mut axes = Vec::new();
    for (p_idx, p) in spec.plants.iter().enumerate() {
        match *p {
            Plant::Diff { latent, .. } => labels[latent as usize] = format!("diff plant {p_idx}"),
            Plant::Relevance { latent, .. } => labels[latent as usize] = format!("relevance plant {p_idx}"),
            Plant::Pair { i, j, label_sim, .. } => {
                let a = vecs[i as usize].clone();
                vecs[j as usize] = with_cosine(rng, &a, label_sim);
                labels[i as usize] = format!("pair plant {p_idx} first");
                labels[j as usize] = format!("pair plant {p_idx} second");
            }
            Plant::Blocks { .. } => {
                let axis = random_unit(rng, dim);
                for l in p.latents() {
                    let jitter = random_unit(rng, dim);
                    vecs[l as usize] = normalize(
                        &axis
                            .iter()
                            .zip(&jitter)
                            .map(|(a, r)| a + AXIS_JITTER * r)
                            .collect::<Vec<_>>(),
                    );
                    labels[l as usize] = format!("block plant {p_idx} latent {l}");
                }
                axes.push(to_f32(&axis));
            }
        }
    }
    let mut catalog = LatentCatalog::new();
    for (l, (v, label)) in vecs.iter().zip(labels).enumerate() {
        catalog.insert(LatentCatalogEntry {
            latent_id: l as u32,
            label,
            label_vec: Some(to_f32(v)),
            provenance: Default::default(),
        })?;
    }
    Ok((catalog, axes))
}

/// Geometric skipping over `0..n` keeping each index with probability `p`.
fn bernoulli_indices(rng: &mut impl Rng, n: usize, p: f64, mut keep: impl FnMut(usize)) {
    if p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..n).for_each(keep);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut i = 0usize;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (n - i) as f64 {
            return;
        }
        i += skip as usize;
        keep(i);
        i += 1;
        if i >= n {
            return;
        }
    }
}

struct DocPlan<'a> {
    spec: &'a SynthSpec,
    background: &'a [u32],
    relevant: &'a [BTreeSet<usize>],
}

/// Generates one document; also reports each blocks directive's block.
fn gen_doc(plan: &DocPlan, dataset: usize, ordinal: usize, name: &str) -> (DocActivations, Vec<usize>) {
    let spec = plan.spec;
    let mut rng = doc_rng(spec.seed, dataset, ordinal);
    let last = spec.tokens_per_doc - 1;
    let mut placed: Vec<(u32, u32)> = Vec::new();
    let anywhere = |rng: &mut ChaCha8Rng, l: u32, placed: &mut Vec<(u32, u32)>| {
        placed.push((rng.random_range(0..=last), l));
    };
    bernoulli_indices(&mut rng, plan.background.len(), spec.background_rate, |i| {
        placed.push((u32::MAX, plan.background[i]))
    });
    for p in placed.iter_mut() {
        p.0 = rng.random_range(0..=last);
    }
    let mut blocks = Vec::new();
    let mut rel_idx = 0;
    for p in &spec.plants {
        match *p {
            Plant::Diff { latent, rate_a, rate_b } => {
                let r = if dataset == 0 { rate_a } else { rate_b };
                if rng.random::<f64>() < r {
                    anywhere(&mut rng, latent, &mut placed);
                }
            }
            Plant::Pair {
                i,
                j,
                joint_rate,
                marginal_i,
                marginal_j,
                ..
            } => {
                let only_i = marginal_i.unwrap_or(joint_rate) - joint_rate;
                let only_j = marginal_j.unwrap_or(joint_rate) - joint_rate;
                let u: f64 = rng.random();
                let (hi, hj) = if u < joint_rate {
                    (true, true)
                } else if u < joint_rate + only_i {
                    (true, false)
                } else if u < joint_rate + only_i + only_j {
                    (false, true)
                } else {
                    (false, false)
                };
                if hi {
                    placed.push((0, i));
                }
                if hj {
                    placed.push((last, j));
                }
            }
            Plant::Blocks {
                first_latent,
                k,
                latents_per_block,
                noise,
            } => {
                let b = rng.random_range(0..k);
                blocks.push(b);
                for l in p.latents() {
                    let in_block = (l - first_latent) / latents_per_block == b as u32;
                    let flip = rng.random::<f64>() < noise;
                    if in_block != flip {
                        anywhere(&mut rng, l, &mut placed);
                    }
                }
            }
            Plant::Relevance { latent, .. } => {
                if plan.relevant[rel_idx].contains(&ordinal) {
                    anywhere(&mut rng, latent, &mut placed);
                }
                rel_idx += 1;
            }
        }
    }
    placed.sort_unstable();
    let mut tokens: Vec<TokenActivationRecord> = (0..spec.tokens_per_doc)
        .map(|t| TokenActivationRecord {
            token_index: t,
            entries: Vec::new(),
        })
        .collect();
    for (t, l) in placed {
        let v = log_uniform(&mut rng);
        tokens[t as usize].entries.push((l, v));
    }
    (
        DocActivations {
            doc_id: name.to_string(),
            tokens,
        },
        blocks,
    )
}

fn doc_name(dataset: &str, ordinal: usize) -> String {
    format!("{dataset}-{ordinal:06}")
}

fn present(doc: &DocActivations, latent: u32) -> bool {
    doc.tokens.iter().any(|t| t.entries.iter().any(|e| e.0 == latent))
}

/// Deterministic corpus, ground truth and catalog for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (catalog, axes) = build_catalog(spec, &mut rng)?;
    let planted: BTreeSet<u32> = spec.plants.iter().flat_map(Plant::latents).collect();
    let background: Vec<u32> = (0..spec.d_sae).filter(|l| !planted.contains(l)).collect();
    let relevant: Vec<BTreeSet<usize>> = spec
        .plants
        .iter()
        .filter_map(|p| match *p {
            Plant::Relevance { n_relevant, .. } => {
                Some(sample(&mut rng, spec.n_docs, n_relevant).into_iter().collect())
            }
            _ => None,
        })
        .collect();
    let plan = DocPlan {
        spec,
        background: &background,
        relevant: &relevant,
    };
    let names = spec.dataset_names();
    let mut datasets = Vec::new();
    let mut block_assign: Vec<Vec<(String, Vec<usize>)>> = Vec::new();
    for (d, name) in names.iter().enumerate() {
        let generated: Vec<(DocActivations, Vec<usize>)> = (0..spec.n_docs)
            .into_par_iter()
            .map(|o| gen_doc(&plan, d, o, &doc_name(name, o)))
            .collect();
        block_assign.push(
            generated
                .iter()
                .map(|(doc, b)| (doc.doc_id.clone(), b.clone()))
                .collect(),
        );
        datasets.push(SynthDataset {
            name: name.to_string(),
            docs: generated.into_iter().map(|g| g.0).collect(),
        });
    }

    let mut truth = GroundTruth {
        datasets: names.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    let freq =
        |ds: &SynthDataset, l: u32| ds.docs.iter().filter(|d| present(d, l)).count() as f64 / ds.docs.len() as f64;
    let (mut block_idx, mut rel_idx) = (0, 0);
    for p in &spec.plants {
        match *p {
            Plant::Diff { latent, rate_a, rate_b } => truth.diffs.push(DiffTruth {
                latent,
                rate_a,
                rate_b,
                freq_a: freq(&datasets[0], latent),
                freq_b: freq(&datasets[1], latent),
            }),
            Plant::Pair {
                i,
                j,
                joint_rate,
                label_sim,
                ..
            } => {
                let docs = &datasets[0].docs;
                let count = |f: &dyn Fn(&DocActivations) -> bool| docs.iter().filter(|d| f(d)).count();
                truth.pairs.push(PairTruth {
                    i,
                    j,
                    joint_rate,
                    label_sim,
                    n_i: count(&|d| present(d, i)),
                    n_j: count(&|d| present(d, j)),
                    n_ij: count(&|d| present(d, i) && present(d, j)),
                });
            }
            Plant::Blocks {
                first_latent,
                k,
                latents_per_block,
                ..
            } => {
                let bi = block_idx;
                truth.blocks.push(BlocksTruth {
                    first_latent,
                    k,
                    latents_per_block,
                    axis: axes[bi].clone(),
                    assignment: block_assign
                        .iter()
                        .flatten()
                        .map(|(id, b)| (id.clone(), b[bi]))
                        .collect(),
                });
                block_idx += 1;
            }
            Plant::Relevance { latent, .. } => {
                truth.relevance.push(RelevanceTruth {
                    latent,
                    query_id: format!("q{rel_idx}"),
                    relevant: relevant[rel_idx].iter().map(|&o| doc_name(names[0], o)).collect(),
                });
                rel_idx += 1;
            }
        }
    }
    Ok(SynthOutput {
        datasets,
        truth,
        catalog,
    })
}

/// Latent ids with Zipf-like document frequencies: latent `r` is present in
/// each document with probability `min(1, c / (r + 1)^exponent)`, `c` chosen
/// so a document has `mean_active` latents on average. Used for throughput
/// benchmarks.
pub fn zipf_corpus(n_docs: usize, d_sae: u32, mean_active: f64, exponent: f64, seed: u64) -> Vec<BinaryEmbedding> {
    let weights: Vec<f64> = (0..d_sae).map(|r| ((r + 1) as f64).powf(-exponent)).collect();
    let expected = |c: f64| weights.iter().map(|w| (c * w).min(1.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, mean_active.max(1.0) * 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < mean_active {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let per_latent: Vec<Vec<u32>> = (0..d_sae)
        .into_par_iter()
        .map(|l| {
            let mut rng = doc_rng(seed, 1, l as usize);
            let mut docs = Vec::new();
            bernoulli_indices(&mut rng, n_docs, (c * weights[l as usize]).min(1.0), |d| {
                docs.push(d as u32)
            });
            docs
        })
        .collect();
    let mut active: Vec<Vec<u32>> = vec![Vec::new(); n_docs];
    for (l, docs) in per_latent.iter().enumerate() {
        for &d in docs {
            active[d as usize].push(l as u32);
        }
    }
    active
        .into_iter()
        .enumerate()
        .map(|(d, active)| BinaryEmbedding {
            doc_id: format!("z{d:06}"),
            active,
        })
        .collect()
}

/// Outputs from the analysis modules to score against a ground truth. Cluster
/// results are matched to blocks directives by position.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecoveryInputs<'a> {
    pub pairs: Option<&'a [(u32, u32)]>,
    pub diff: Option<&'a [DiffEntry]>,
    pub clusters: Option<&'a [ClusterResult]>,
    pub rankings: Option<&'a [RetrievalRanking]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// Planted share of surfaced pairs; `None` when nothing surfaced.
    pub pair_precision: Option<f64>,
    pub pair_recall: Option<f64>,
    /// Per planted pair, in spec order.
    pub pair_found: Vec<bool>,
    /// 1-based rank of each planted diff latent, `None` when absent.
    pub diff_ranks: Vec<Option<usize>>,
    pub cluster_ari: Vec<f64>,
    pub map: Option<f64>,
}

fn known_docs(truth: &GroundTruth) -> Option<BTreeSet<&str>> {
    let b = truth.blocks.first()?;
    Some(b.assignment.keys().map(String::as_str).collect())
}

pub fn evaluate_recovery(inputs: RecoveryInputs, truth: &GroundTruth) -> Result<RecoveryMetrics> {
    let mut m = RecoveryMetrics {
        pair_precision: None,
        pair_recall: None,
        pair_found: Vec::new(),
        diff_ranks: Vec::new(),
        cluster_ari: Vec::new(),
        map: None,
    };
    if let Some(found) = inputs.pairs {
        let norm = |(a, b): (u32, u32)| if a < b { (a, b) } else { (b, a) };
        let surfaced: BTreeSet<(u32, u32)> = found.iter().copied().map(norm).collect();
        let planted: BTreeSet<(u32, u32)> = truth.pairs.iter().map(|p| norm((p.i, p.j))).collect();
        let hit = surfaced.intersection(&planted).count();
        m.pair_found = truth
            .pairs
            .iter()
            .map(|p| surfaced.contains(&norm((p.i, p.j))))
            .collect();
        m.pair_precision = (!surfaced.is_empty()).then(|| hit as f64 / surfaced.len() as f64);
        m.pair_recall = (!planted.is_empty()).then(|| hit as f64 / planted.len() as f64);
    }
    if let Some(entries) = inputs.diff {
        m.diff_ranks = truth
            .diffs
            .iter()
            .map(|d| entries.iter().position(|e| e.latent_id == d.latent).map(|p| p + 1))
            .collect();
    }
    if let Some(results) = inputs.clusters {
        if results.len() != truth.blocks.len() {
            return Err(Error::invalid(format!(
                "{} clusterings for {} blocks directives",
                results.len(),
                truth.blocks.len()
            )));
        }
        for (r, b) in results.iter().zip(&truth.blocks) {
            m.cluster_ari.push(ari_against(r, &b.assignment)?);
        }
    }
    if let Some(rankings) = inputs.rankings {
        let known = known_docs(truth);
        let mut aps = Vec::new();
        for rel in &truth.relevance {
            let r = rankings
                .iter()
                .find(|r| r.query_id == rel.query_id)
                .ok_or_else(|| Error::invalid(format!("no ranking for query {}", rel.query_id)))?;
            if let Some(k) = &known {
                if r.ranked_doc_ids.iter().any(|d| !k.contains(d.as_str())) {
                    return Err(Error::invalid(
                        "ranking contains documents outside the generated corpus",
                    ));
                }
            }
            aps.push(evaluate_ranking(r, &rel.relevant, 1)?.ap);
        }
        if !aps.is_empty() {
            m.map = Some(mean(&aps)?);
        }
    }
    Ok(m)
}
