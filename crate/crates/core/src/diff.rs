//! Dataset diffing: rank latents by the difference of their document
//! frequencies between a target corpus and one or more other corpora.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::LatentCatalog;
use crate::embedding::InvertedIndex;
use crate::error::{Error, Result};
use crate::gateway::{AnnotationTask, Exhibit, TaskKind, TaskPayload};

pub const DEFAULT_MIN_DELTA: f64 = 0.03;
pub const DEFAULT_TOP_N: usize = 200;
const EXAMPLES_PER_SIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffExamples {
    /// From the side where the latent is more frequent.
    pub activating: Vec<String>,
    /// From the opposite side, documents lacking the latent.
    pub non_activating: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub latent_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub freq_target: f64,
    pub freq_other: f64,
    /// Exactly `freq_target - freq_other`.
    pub delta: f64,
    /// Which of the other corpora supplied `freq_other`.
    pub other_index: usize,
    pub examples: DiffExamples,
}

fn first_active(idx: &InvertedIndex, latent: u32, n: usize) -> Vec<String> {
    idx.postings(latent)
        .iter()
        .take(n)
        .map(|&d| idx.doc_id(d as usize).to_string())
        .collect()
}

fn first_inactive(idx: &InvertedIndex, latent: u32, n: usize) -> Vec<String> {
    let postings = idx.postings(latent);
    let mut out = Vec::with_capacity(n);
    let mut p = 0;
    for d in 0..idx.n_docs() {
        if out.len() == n {
            break;
        }
        while p < postings.len() && (postings[p] as usize) < d {
            p += 1;
        }
        if p < postings.len() && postings[p] as usize == d {
            continue;
        }
        out.push(idx.doc_id(d).to_string());
    }
    out
}

fn sort_entries(entries: &mut [DiffEntry]) {
    entries.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.latent_id.cmp(&b.latent_id)));
}

/// Frequency difference of every latent between `target` and the maximum
/// frequency among `others`, keeping `|delta| >= min_delta`, sorted by delta
/// descending (ties by latent id).
pub fn diff_one_vs_rest(target: &InvertedIndex, others: &[&InvertedIndex], min_delta: f64) -> Result<Vec<DiffEntry>> {
    if others.is_empty() {
        return Err(Error::invalid("at least one other corpus is required"));
    }
    if target.n_docs() == 0 || others.iter().any(|o| o.n_docs() == 0) {
        return Err(Error::EmptyCorpus);
    }
    let mut latents: BTreeSet<u32> = target.latents().collect();
    for o in others {
        latents.extend(o.latents());
    }
    let nt = target.n_docs() as f64;
    let mut entries: Vec<DiffEntry> = latents
        .into_iter()
        .filter_map(|l| {
            let freq_target = target.doc_count(l) as f64 / nt;
            let (other_index, freq_other) = others
                .iter()
                .enumerate()
                .map(|(i, o)| (i, o.doc_count(l) as f64 / o.n_docs() as f64))
                // first maximum wins
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            let delta = freq_target - freq_other;
            if delta.abs() < min_delta {
                return None;
            }
            let other = others[other_index];
            let (activating, non_activating) = if delta >= 0.0 {
                (
                    first_active(target, l, EXAMPLES_PER_SIDE),
                    first_inactive(other, l, EXAMPLES_PER_SIDE),
                )
            } else {
                (
                    first_active(other, l, EXAMPLES_PER_SIDE),
                    first_inactive(target, l, EXAMPLES_PER_SIDE),
                )
            };
            Some(DiffEntry {
                latent_id: l,
                label: None,
                freq_target,
                freq_other,
                delta,
                other_index,
                examples: DiffExamples {
                    activating,
                    non_activating,
                },
            })
        })
        .collect();
    sort_entries(&mut entries);
    Ok(entries)
}

pub fn diff_pair(a: &InvertedIndex, b: &InvertedIndex, min_delta: f64) -> Result<Vec<DiffEntry>> {
    diff_one_vs_rest(a, &[b], min_delta)
}

/// First `n` entries by delta descending, ties by latent id.
pub fn top_diff_latents(entries: &[DiffEntry], n: usize) -> Vec<DiffEntry> {
    let mut v = entries.to_vec();
    sort_entries(&mut v);
    v.truncate(n);
    v
}

/// Attaches catalog labels in place.
pub fn attach_labels(entries: &mut [DiffEntry], catalog: &LatentCatalog) {
    for e in entries {
        e.label = catalog.label(e.latent_id).map(str::to_string);
    }
}

/// `freq(YES in target) - freq(YES in other)` from per-document judge calls.
pub fn verified_frequency_difference(target: &[bool], other: &[bool]) -> Result<f64> {
    if target.is_empty() || other.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let f = |j: &[bool]| j.iter().filter(|&&b| b).count() as f64 / j.len() as f64;
    Ok(f(target) - f(other))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBundle {
    pub task: AnnotationTask,
    pub included: Vec<u32>,
    pub warnings: Vec<String>,
}

/// Packages labeled diff entries into a summarize task. Entries without a
/// label or without both example kinds are skipped with a warning; the bundle
/// stops growing once the estimated token count (chars / 4) would exceed
/// `token_budget`.
pub fn export_hypothesis_bundle<F>(
    entries: &[DiffEntry],
    catalog: &LatentCatalog,
    doc_text: F,
    query: &str,
    token_budget: usize,
) -> HypothesisBundle
where
    F: Fn(&str) -> Option<String>,
{
    let mut payload = TaskPayload::default().with_query(query);
    let mut warnings = Vec::new();
    let mut included = Vec::new();
    let mut used = query.len() / 4;
    for e in entries {
        let Some(label) = e.label.as_deref().or_else(|| catalog.label(e.latent_id)) else {
            warnings.push(format!("latent {}: no label, skipped", e.latent_id));
            continue;
        };
        let act = e.examples.activating.iter().find_map(|id| doc_text(id));
        let non = e.examples.non_activating.iter().find_map(|id| doc_text(id));
        let (Some(act), Some(non)) = (act, non) else {
            warnings.push(format!(
                "latent {}: missing activating or non-activating example, skipped",
                e.latent_id
            ));
            continue;
        };
        let cost = (label.len() + act.len() + non.len()) / 4 + 16;
        if used + cost > token_budget {
            warnings.push(format!("token budget {token_budget} reached at latent {}", e.latent_id));
            break;
        }
        used += cost;
        included.push(e.latent_id);
        payload.exhibits.push(
            Exhibit::new("latent", label)
                .with_field("latent_id", e.latent_id)
                .with_field("delta", e.delta)
                .with_field("activating_example", act)
                .with_field("non_activating_example", non),
        );
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    HypothesisBundle {
        task: AnnotationTask::new(TaskKind::Summarize, payload),
        included,
        warnings,
    }
}
