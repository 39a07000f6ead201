//! Latent labels and label vectors, with exhaustive cosine search.
//!
//! Latents without a label vector still exist for diffing and correlations by
//! id; they are skipped by every similarity query.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DocActivations;
use crate::error::{Error, Result};
use crate::formats::write_jsonl;
use crate::gateway::{AnnotationTask, Exhibit, TaskKind, TaskPayload};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Original,
    Relabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCatalogEntry {
    pub latent_id: u32,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_vec: Option<Vec<f32>>,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    Strict,
    /// Skip malformed lines (with a warning) instead of failing.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentCatalog {
    entries: BTreeMap<u32, LatentCatalogEntry>,
    dim: Option<usize>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl LatentCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry, checking the vector invariant.
    pub fn insert(&mut self, entry: LatentCatalogEntry) -> Result<Option<LatentCatalogEntry>> {
        if let Some(v) = &entry.label_vec {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!(
                    "latent {}: label_vec norm {n} is not 1",
                    entry.latent_id
                )));
            }
            match self.dim {
                Some(d) if d != v.len() => {
                    return Err(Error::Dimension(format!(
                        "latent {}: label_vec has {} dims, catalog uses {d}",
                        entry.latent_id,
                        v.len()
                    )))
                }
                _ => self.dim = Some(v.len()),
            }
        }
        Ok(self.entries.insert(entry.latent_id, entry))
    }

    /// Loads a catalog JSONL file; later duplicates replace earlier ones.
    /// Returns the catalog and any warnings raised while loading.
    pub fn load(path: impl AsRef<Path>, mode: LoadMode) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let mut warnings = Vec::new();
        let mut cat = Self::new();
        let file = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in file.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<LatentCatalogEntry>(line)
                .map_err(|e| e.to_string())
                .and_then(|entry| {
                    let id = entry.latent_id;
                    cat.insert(entry).map(|old| (id, old)).map_err(|e| e.to_string())
                });
            match parsed {
                Ok((id, Some(_))) => {
                    let w = format!("line {}: duplicate latent {id}, last entry wins", i + 1);
                    log::warn!("{w}");
                    warnings.push(w);
                }
                Ok(_) => {}
                Err(message) if mode == LoadMode::Lenient => {
                    let w = format!("line {}: skipped: {message}", i + 1);
                    log::warn!("{w}");
                    warnings.push(w);
                }
                Err(message) => return Err(Error::Line { line: i + 1, message }),
            }
        }
        Ok((cat, warnings))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<&LatentCatalogEntry> = self.entries.values().collect();
        write_jsonl(path, &rows)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, latent: u32) -> Option<&LatentCatalogEntry> {
        self.entries.get(&latent)
    }

    pub fn label(&self, latent: u32) -> Option<&str> {
        self.entries.get(&latent).map(|e| e.label.as_str())
    }

    pub fn vector(&self, latent: u32) -> Option<&[f32]> {
        self.entries.get(&latent).and_then(|e| e.label_vec.as_deref())
    }

    pub fn entries(&self) -> impl Iterator<Item = &LatentCatalogEntry> {
        self.entries.values()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn has_vectors(&self) -> bool {
        self.entries.values().any(|e| e.label_vec.is_some())
    }

    /// Cosine similarity of two labels.
    pub fn label_similarity(&self, i: u32, j: u32) -> Result<f64> {
        let a = self.vector(i).ok_or(Error::MissingVector(i))?;
        let b = self.vector(j).ok_or(Error::MissingVector(j))?;
        Ok(dot(a, b).clamp(-1.0, 1.0))
    }

    /// The `k` entries most cosine-similar to `query`, descending, ties by
    /// lower latent id. The query is normalized first.
    pub fn top_k_latents(&self, query: &[f32], k: usize) -> Result<Vec<(u32, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if !self.has_vectors() {
            return Err(Error::invalid("catalog has no label vectors"));
        }
        if Some(query.len()) != self.dim {
            return Err(Error::Dimension(format!(
                "query has {} dims, catalog uses {}",
                query.len(),
                self.dim.unwrap_or(0)
            )));
        }
        let qn = norm(query);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::invalid("query vector has zero or non-finite norm"));
        }
        let mut scored: Vec<(u32, f64)> = self
            .entries
            .values()
            .filter_map(|e| e.label_vec.as_ref().map(|v| (e.latent_id, dot(v, query) / qn)))
            .collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored)
    }

    /// Union over keyphrases of each keyphrase's top-`k` latents.
    pub fn union_keyphrase_latents(&self, keyphrases: &[Vec<f32>], k: usize) -> Result<BTreeSet<u32>> {
        if keyphrases.is_empty() {
            return Err(Error::invalid("at least one keyphrase vector is required"));
        }
        let mut out = BTreeSet::new();
        for q in keyphrases {
            out.extend(self.top_k_latents(q, k)?.into_iter().map(|(id, _)| id));
        }
        Ok(out)
    }
}

/// One document shown in a relabeling task.
#[derive(Debug, Clone)]
pub struct RelabelDoc<'a> {
    pub activations: &'a DocActivations,
    /// Token strings aligned with `token_index`; when absent the exhibit
    /// carries `text` and the active token indices instead.
    pub tokens: Option<&'a [String]>,
    pub text: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelabelCounts {
    pub activating: usize,
    pub non_activating: usize,
}

impl Default for RelabelCounts {
    fn default() -> Self {
        Self {
            activating: 10,
            non_activating: 10,
        }
    }
}

/// Random activating / non-activating doc ordinals for relabeling `latent`.
pub fn sample_relabel_docs(
    latent: u32,
    idx: &crate::embedding::InvertedIndex,
    counts: RelabelCounts,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ latent as u64);
    let active: BTreeSet<usize> = idx.postings(latent).iter().map(|&d| d as usize).collect();
    let mut pos: Vec<usize> = active.iter().copied().collect();
    let mut neg: Vec<usize> = (0..idx.n_docs()).filter(|d| !active.contains(d)).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(counts.activating);
    neg.truncate(counts.non_activating);
    pos.sort_unstable();
    neg.sort_unstable();
    (pos, neg)
}

fn mark_tokens(doc: &RelabelDoc<'_>, active: &[u32]) -> String {
    match doc.tokens {
        Some(tokens) => tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if active.binary_search(&(i as u32)).is_ok() {
                    format!("<<{t}>>")
                } else {
                    t.clone()
                }
            })
            .collect::<String>(),
        None => doc.text.to_string(),
    }
}

/// Builds a relabel task: activating exhibits have the firing tokens wrapped
/// in `<<` `>>`. Supplied docs must agree with their role.
pub fn make_relabel_task(
    latent: u32,
    current_label: Option<&str>,
    activating: &[RelabelDoc<'_>],
    non_activating: &[RelabelDoc<'_>],
) -> Result<AnnotationTask> {
    let mut payload = TaskPayload::default().with_param("latent_id", latent);
    if let Some(l) = current_label {
        payload = payload.with_query(l);
    }
    for doc in activating {
        let positions = doc.activations.positions_of(latent);
        if positions.is_empty() {
            return Err(Error::invalid(format!(
                "doc {:?} supplied as activating but latent {latent} is inactive",
                doc.activations.doc_id
            )));
        }
        let mut ex = Exhibit::new("activating", mark_tokens(doc, &positions)).with_doc(&doc.activations.doc_id);
        if doc.tokens.is_none() {
            ex = ex.with_field("active_tokens", positions);
        }
        payload.exhibits.push(ex);
    }
    for doc in non_activating {
        if !doc.activations.positions_of(latent).is_empty() {
            return Err(Error::invalid(format!(
                "doc {:?} supplied as non-activating but latent {latent} is active",
                doc.activations.doc_id
            )));
        }
        payload
            .exhibits
            .push(Exhibit::new("non_activating", mark_tokens(doc, &[])).with_doc(&doc.activations.doc_id));
    }
    Ok(AnnotationTask::new(TaskKind::Relabel, payload))
}
