//! Latent co-occurrence mining.
//!
//! Joint document counts come from per-document pair expansion, organised by
//! row: for each qualifying latent `i`, walk its postings and bump a dense
//! scratch counter for every `j > i` active in the same document. Rows are
//! independent, so they run in parallel with one scratch buffer per worker;
//! total work is `O(Σ_d |active_d|²)`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::LatentCatalog;
use crate::embedding::{DocActivations, InvertedIndex};
use crate::error::{Error, Result};

/// Co-occurring latents of one qualifying latent `i`, with `j > i` ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocRow {
    pub i: u32,
    pub entries: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    pub n_docs: usize,
    pub rows: Vec<CoocRow>,
}

impl CooccurrenceCounts {
    /// Number of pairs with `n_ij >= 1`.
    pub fn len(&self) -> usize {
        self.rows.iter().map(|r| r.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: u32, j: u32) -> u32 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.rows
            .binary_search_by_key(&i, |r| r.i)
            .ok()
            .and_then(|r| {
                let row = &self.rows[r].entries;
                row.binary_search_by_key(&j, |e| e.0).ok().map(|k| row[k].1)
            })
            .unwrap_or(0)
    }

    /// `(i, j, n_ij)` with `i < j`, lexicographic.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.rows
            .iter()
            .flat_map(|r| r.entries.iter().map(move |&(j, c)| (r.i, j, c)))
    }

    pub fn to_map(&self) -> BTreeMap<(u32, u32), u32> {
        self.iter().map(|(i, j, c)| ((i, j), c)).collect()
    }
}

/// Latents whose document frequency is at least `min_freq` (and non-zero).
fn qualifying(idx: &InvertedIndex, min_freq: f64) -> Vec<bool> {
    let n = idx.n_docs() as f64;
    (0..idx.latent_bound())
        .map(|l| {
            let c = idx.doc_count(l);
            c > 0 && c as f64 / n >= min_freq
        })
        .collect()
}

/// Streams rows of pair counts to `sink` in parallel; `sink` sees each
/// qualifying `i` exactly once with its `(j, n_ij)` list.
fn for_each_row<T, F>(idx: &InvertedIndex, min_freq: f64, row_fn: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32, &[(u32, u32)]) -> Option<T> + Sync,
{
    if idx.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..1.0).contains(&min_freq) {
        return Err(Error::invalid(format!("min_freq {min_freq} outside [0, 1)")));
    }
    let keep = qualifying(idx, min_freq);
    let forward: Vec<Vec<u32>> = (0..idx.n_docs())
        .into_par_iter()
        .map(|d| idx.active(d).iter().copied().filter(|&l| keep[l as usize]).collect())
        .collect();
    let bound = idx.latent_bound() as usize;
    let rows: Vec<u32> = (0..bound as u32).filter(|&l| keep[l as usize]).collect();
    let out = rows
        .par_iter()
        .map_init(
            || (vec![0u32; bound], Vec::<u32>::new(), Vec::<(u32, u32)>::new()),
            |(counts, touched, row), &i| {
                for &d in idx.postings(i) {
                    let active = &forward[d as usize];
                    let start = active.partition_point(|&l| l <= i);
                    for &j in &active[start..] {
                        let c = &mut counts[j as usize];
                        if *c == 0 {
                            touched.push(j);
                        }
                        *c += 1;
                    }
                }
                touched.sort_unstable();
                row.clear();
                for &j in touched.iter() {
                    row.push((j, counts[j as usize]));
                    counts[j as usize] = 0;
                }
                touched.clear();
                row_fn(i, row)
            },
        )
        .filter_map(|x| x)
        .collect();
    Ok(out)
}

/// Exact joint document counts for every pair of latents with frequency
/// `>= min_freq` that co-occur in at least one document.
pub fn cooccurrence_counts(idx: &InvertedIndex, min_freq: f64) -> Result<CooccurrenceCounts> {
    let rows = for_each_row(idx, min_freq, |i, row| {
        (!row.is_empty()).then(|| CoocRow {
            i,
            entries: row.to_vec(),
        })
    })?;
    Ok(CooccurrenceCounts {
        n_docs: idx.n_docs(),
        rows,
    })
}

fn check_counts(n_i: u64, n_j: u64, n_ij: u64, n_docs: u64) -> Result<()> {
    if n_i == 0 || n_j == 0 || n_docs == 0 {
        return Err(Error::invalid("marginal and corpus counts must be >= 1"));
    }
    if n_ij > n_i.min(n_j) || n_i > n_docs || n_j > n_docs {
        return Err(Error::invalid(format!(
            "inconsistent counts n_i={n_i} n_j={n_j} n_ij={n_ij} n_docs={n_docs}"
        )));
    }
    Ok(())
}

/// Normalized pointwise mutual information from document counts, natural log.
/// `n_ij = 0` gives -1, `P(i,j) = 1` gives +1.
pub fn npmi(n_i: u64, n_j: u64, n_ij: u64, n_docs: u64) -> Result<f64> {
    check_counts(n_i, n_j, n_ij, n_docs)?;
    if n_ij == 0 {
        return Ok(-1.0);
    }
    if n_ij == n_docs {
        return Ok(1.0);
    }
    let joint = n_ij as i128 * n_docs as i128;
    let indep = n_i as i128 * n_j as i128;
    let pmi = ((joint - indep) as f64 / indep as f64).ln_1p();
    let h = ((n_docs - n_ij) as f64 / n_ij as f64).ln_1p();
    Ok((pmi / h).clamp(-1.0, 1.0))
}

/// `max(P(i|j), P(j|i))`.
pub fn conditional_occurrence(n_i: u64, n_j: u64, n_ij: u64) -> Result<f64> {
    if n_i == 0 || n_j == 0 {
        return Err(Error::invalid("conditional occurrence needs non-zero marginals"));
    }
    if n_ij > n_i.min(n_j) {
        return Err(Error::invalid("n_ij exceeds a marginal"));
    }
    Ok((n_ij as f64 / n_j as f64).max(n_ij as f64 / n_i as f64))
}

/// NPMI over judge-derived presence vectors.
pub fn verified_npmi(judgments_i: &[bool], judgments_j: &[bool]) -> Result<f64> {
    if judgments_i.len() != judgments_j.len() || judgments_i.is_empty() {
        return Err(Error::invalid("judgment vectors must be non-empty and of equal length"));
    }
    let n_i = judgments_i.iter().filter(|&&b| b).count() as u64;
    let n_j = judgments_j.iter().filter(|&&b| b).count() as u64;
    if n_i == 0 || n_j == 0 {
        return Err(Error::invalid("degenerate judgments: a marginal is all-false"));
    }
    let n_ij = judgments_i.iter().zip(judgments_j).filter(|(&a, &b)| a && b).count() as u64;
    npmi(n_i, n_j, n_ij, judgments_i.len() as u64)
}

/// Share of the supplied documents in which every occurrence of `i` has `j`
/// on the same or an adjacent token, and vice versa.
pub fn trivial_fraction(i: u32, j: u32, docs: &[&DocActivations]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::invalid("no documents to examine"));
    }
    let near = |p: u32, others: &[u32]| others.iter().any(|&q| p.abs_diff(q) <= 1);
    let mut trivial = 0usize;
    for doc in docs {
        let pi = doc.positions_of(i);
        let pj = doc.positions_of(j);
        if pi.is_empty() || pj.is_empty() {
            return Err(Error::invalid(format!(
                "latents {i} and {j} do not co-occur in doc {:?}",
                doc.doc_id
            )));
        }
        if pi.iter().all(|&p| near(p, &pj)) && pj.iter().all(|&p| near(p, &pi)) {
            trivial += 1;
        }
    }
    Ok(trivial as f64 / docs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub i: u32,
    pub j: u32,
    pub n_i: u64,
    pub n_j: u64,
    pub n_ij: u64,
    pub npmi: f64,
    pub co: f64,
    pub label_sim: Option<f64>,
    pub trivial_fraction: Option<f64>,
    /// Documents examined for `trivial_fraction`.
    pub trivial_sample: usize,
    pub example_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationParams {
    pub npmi_min: f64,
    pub sim_max: f64,
    pub min_freq: f64,
    pub trivial_max: f64,
    /// Co-occurring docs examined per pair for the trivial filter.
    pub trivial_sample: usize,
    /// Let pairs without label vectors through the similarity filter.
    pub lenient: bool,
    /// Latents removed before pairing (e.g. purely syntactic ones).
    pub exclude: BTreeSet<u32>,
    pub examples_per_pair: usize,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        Self::real_world()
    }
}

impl CorrelationParams {
    /// Thresholds for natural corpora.
    pub fn real_world() -> Self {
        Self {
            npmi_min: 0.6,
            sim_max: 0.2,
            min_freq: 0.002,
            trivial_max: 0.5,
            trivial_sample: 1000,
            lenient: false,
            exclude: BTreeSet::new(),
            examples_per_pair: 3,
        }
    }

    /// Stricter NPMI preset for planted-correlation recovery.
    pub fn injection() -> Self {
        Self {
            npmi_min: 0.8,
            ..Self::real_world()
        }
    }
}

fn intersect_first(a: &[u32], b: &[u32], limit: usize) -> Vec<u32> {
    let (mut x, mut y) = (0, 0);
    let mut out = Vec::new();
    while x < a.len() && y < b.len() && out.len() < limit {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

/// Pairs with high NPMI, dissimilar labels and mostly non-adjacent
/// co-activation. `activations`, when given, must be aligned with the index
/// ordinals; without it the trivial filter is skipped and
/// `trivial_fraction` is `None`.
pub fn find_correlated_pairs(
    idx: &InvertedIndex,
    catalog: &LatentCatalog,
    params: &CorrelationParams,
    activations: Option<&[DocActivations]>,
) -> Result<Vec<PairStats>> {
    if idx.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if !params.lenient && !catalog.has_vectors() {
        return Err(Error::invalid("catalog has no label vectors (strict mode)"));
    }
    if let Some(a) = activations {
        if a.len() != idx.n_docs() {
            return Err(Error::Dimension(format!(
                "{} activation docs for an index of {}",
                a.len(),
                idx.n_docs()
            )));
        }
    }
    let n = idx.n_docs() as u64;
    let rows = for_each_row(idx, params.min_freq, |i, row| {
        if params.exclude.contains(&i) {
            return None;
        }
        let n_i = idx.doc_count(i) as u64;
        let mut found = Vec::new();
        for &(j, n_ij) in row {
            if params.exclude.contains(&j) {
                continue;
            }
            let n_j = idx.doc_count(j) as u64;
            let score = npmi(n_i, n_j, n_ij as u64, n).expect("counts from index are consistent");
            if score < params.npmi_min {
                continue;
            }
            let label_sim = match (catalog.vector(i), catalog.vector(j)) {
                (Some(_), Some(_)) => Some(catalog.label_similarity(i, j).expect("vectors present")),
                _ => None,
            };
            match label_sim {
                Some(s) if s > params.sim_max => continue,
                None if !params.lenient => continue,
                _ => {}
            }
            found.push((j, n_j, n_ij as u64, score, label_sim));
        }
        (!found.is_empty()).then_some((i, n_i, found))
    })?;

    let mut out = Vec::new();
    for (i, n_i, found) in rows {
        for (j, n_j, n_ij, score, label_sim) in found {
            let (trivial, sample) = match activations {
                Some(acts) => {
                    let docs = intersect_first(idx.postings(i), idx.postings(j), params.trivial_sample);
                    let refs: Vec<&DocActivations> = docs.iter().map(|&d| &acts[d as usize]).collect();
                    (Some(trivial_fraction(i, j, &refs)?), refs.len())
                }
                None => (None, 0),
            };
            if matches!(trivial, Some(t) if t > params.trivial_max) {
                continue;
            }
            let examples = intersect_first(idx.postings(i), idx.postings(j), params.examples_per_pair)
                .into_iter()
                .map(|d| idx.doc_id(d as usize).to_string())
                .collect();
            out.push(PairStats {
                i,
                j,
                n_i,
                n_j,
                n_ij,
                npmi: score,
                co: conditional_occurrence(n_i, n_j, n_ij)?,
                label_sim,
                trivial_fraction: trivial,
                trivial_sample: sample,
                example_doc_ids: examples,
            });
        }
    }
    out.sort_by(|a, b| b.npmi.total_cmp(&a.npmi).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    Ok(out)
}
