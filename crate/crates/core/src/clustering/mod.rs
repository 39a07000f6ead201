//! Document clustering over binarized SAE embeddings.

mod conductance;
mod hungarian;
mod spectral;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use conductance::{conductance_zscore, conductance_zscore_in, KnnGraph, DEFAULT_KNN, DEFAULT_N_RANDOM};
pub use hungarian::{align_clusters, confusion_matrix};
pub use spectral::{
    jaccard, jaccard_matrix, kmeans, spectral_labels, SimilarityMatrix, KMEANS_MAX_ITER, KMEANS_RESTARTS,
};

use crate::catalog::LatentCatalog;
use crate::diff::{diff_pair, DiffEntry};
use crate::embedding::{build_index, BinaryEmbedding, InvertedIndex};
use crate::error::{Error, Result};
use crate::gateway::{AnnotationTask, Exhibit, TaskKind, TaskPayload};

pub const DEFAULT_K_LATENTS: usize = 100;
const DESCRIBE_TOP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub n_clusters: usize,
    pub assignment: BTreeMap<String, usize>,
    /// Mean pairwise similarity among members; `None` for clusters with
    /// fewer than two members.
    pub similarity_stats: Vec<Option<f64>>,
    pub seed: u64,
    /// Documents left out because their (filtered) active set was empty.
    #[serde(default)]
    pub dropped: Vec<String>,
}

impl ClusterResult {
    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(d, _)| d.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &c in self.assignment.values() {
            s[c] += 1;
        }
        s
    }
}

fn intra_similarity(s: &SimilarityMatrix, labels: &[usize], k: usize) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let m: Vec<usize> = (0..labels.len()).filter(|&a| labels[a] == c).collect();
            if m.len() < 2 {
                return None;
            }
            let mut sum = 0.0;
            for &a in &m {
                for &b in &m {
                    if a != b {
                        sum += s.get(a, b);
                    }
                }
            }
            Some(sum / (m.len() * (m.len() - 1)) as f64)
        })
        .collect()
}

pub fn spectral_cluster(s: &SimilarityMatrix, k: usize, seed: u64) -> Result<ClusterResult> {
    let labels = spectral_labels(s, k, seed)?;
    Ok(ClusterResult {
        n_clusters: k,
        assignment: s.ids().iter().cloned().zip(labels.iter().copied()).collect(),
        similarity_stats: intra_similarity(s, &labels, k),
        seed,
        dropped: Vec::new(),
    })
}

/// Drops empty documents, then Jaccard + spectral clustering.
pub fn cluster_embeddings(embs: &[BinaryEmbedding], k: usize, seed: u64) -> Result<ClusterResult> {
    let (kept, dropped): (Vec<_>, Vec<_>) = embs.iter().partition(|e| !e.active.is_empty());
    if kept.is_empty() {
        return Err(Error::invalid("every document has an empty active set"));
    }
    if !dropped.is_empty() {
        log::warn!(
            "{} documents with no active latents dropped before clustering",
            dropped.len()
        );
    }
    let kept: Vec<BinaryEmbedding> = kept.into_iter().cloned().collect();
    if k > kept.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of clusterable documents ({})",
            kept.len()
        )));
    }
    let mut result = spectral_cluster(&jaccard_matrix(&kept)?, k, seed)?;
    result.dropped = dropped.into_iter().map(|e| e.doc_id.clone()).collect();
    Ok(result)
}

/// Clusters on the latents whose labels are closest to the keyphrases.
pub fn targeted_cluster(
    embs: &[BinaryEmbedding],
    catalog: &LatentCatalog,
    keyphrase_vecs: &[Vec<f32>],
    k_latents: usize,
    k_clusters: usize,
    seed: u64,
) -> Result<ClusterResult> {
    if keyphrase_vecs.is_empty() {
        return Err(Error::invalid("at least one keyphrase vector is required"));
    }
    let keep = catalog.union_keyphrase_latents(keyphrase_vecs, k_latents)?;
    let filtered: Vec<BinaryEmbedding> = embs.iter().map(|e| filter_binary(e, &keep)).collect();
    if filtered.iter().all(|e| e.active.is_empty()) {
        return Err(Error::invalid("no document keeps any latent after keyphrase filtering"));
    }
    cluster_embeddings(&filtered, k_clusters, seed)
}

fn filter_binary(e: &BinaryEmbedding, keep: &BTreeSet<u32>) -> BinaryEmbedding {
    BinaryEmbedding {
        doc_id: e.doc_id.clone(),
        active: e.active.iter().copied().filter(|l| keep.contains(l)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDescription {
    pub cluster: usize,
    pub top_latents: Vec<DiffEntry>,
    pub central_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Top latents by diffing members against everything else, and the members
/// most similar on average to the rest of the cluster. `s` must cover the
/// same documents as `idx` (in any order).
pub fn describe_cluster(
    cluster: usize,
    result: &ClusterResult,
    idx: &InvertedIndex,
    s: &SimilarityMatrix,
) -> Result<ClusterDescription> {
    let ordinal: HashMap<&str, usize> = idx.doc_ids().iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let row: HashMap<&str, usize> = s.ids().iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let members = result.members(cluster);
    if members.is_empty() || members.len() >= idx.n_docs() {
        return Err(Error::invalid(format!(
            "cluster {cluster} has {} of {} documents; it must be non-empty and not the whole corpus",
            members.len(),
            idx.n_docs()
        )));
    }
    let lookup = |d: &str, map: &HashMap<&str, usize>| {
        map.get(d)
            .copied()
            .ok_or_else(|| Error::invalid(format!("document {d:?} missing from index or similarity matrix")))
    };
    let in_ords: BTreeSet<usize> = members.iter().map(|d| lookup(d, &ordinal)).collect::<Result<_>>()?;
    let out_ords: Vec<usize> = (0..idx.n_docs()).filter(|o| !in_ords.contains(o)).collect();
    let in_ords: Vec<usize> = in_ords.into_iter().collect();
    let mut entries = diff_pair(&idx.subset(&in_ords), &idx.subset(&out_ords), 0.0)?;
    entries.truncate(DESCRIBE_TOP);

    let rows: Vec<usize> = members.iter().map(|d| lookup(d, &row)).collect::<Result<_>>()?;
    let mut centrality: Vec<(f64, &str)> = rows
        .iter()
        .zip(&members)
        .map(|(&a, d)| {
            let others = rows.iter().filter(|&&b| b != a);
            let total: f64 = others.map(|&b| s.get(a, b)).sum();
            let mean = if rows.len() > 1 {
                total / (rows.len() - 1) as f64
            } else {
                0.0
            };
            (mean, *d)
        })
        .collect();
    centrality.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
    Ok(ClusterDescription {
        cluster,
        top_latents: entries,
        central_doc_ids: centrality.iter().take(DESCRIBE_TOP).map(|c| c.1.to_string()).collect(),
        label: None,
    })
}

/// Summarize task asking for a short name of the cluster.
pub fn cluster_label_task<F>(desc: &ClusterDescription, catalog: &LatentCatalog, doc_text: F) -> AnnotationTask
where
    F: Fn(&str) -> Option<String>,
{
    let mut payload = TaskPayload::default()
        .with_query("What do the texts in this cluster have in common? Give a short name.")
        .with_param("cluster", desc.cluster);
    for e in &desc.top_latents {
        let label = e
            .label
            .as_deref()
            .or_else(|| catalog.label(e.latent_id))
            .unwrap_or("(unlabeled)");
        payload
            .exhibits
            .push(Exhibit::new("latent", label).with_field("delta", e.delta));
    }
    for d in &desc.central_doc_ids {
        if let Some(t) = doc_text(d) {
            payload.exhibits.push(Exhibit::new("example", t).with_doc(d.as_str()));
        }
    }
    AnnotationTask::new(TaskKind::Summarize, payload)
}

/// Asks which cluster description fits `text`; the answer is a cluster index.
pub fn assign_cluster_task(text: &str, descriptions: &[String]) -> AnnotationTask {
    let mut payload = TaskPayload::default()
        .with_query(text)
        .with_param("n_clusters", descriptions.len());
    for (i, d) in descriptions.iter().enumerate() {
        payload
            .exhibits
            .push(Exhibit::new("cluster", d.as_str()).with_field("index", i));
    }
    AnnotationTask::new(TaskKind::AssignCluster, payload)
}

/// For each original cluster, the share of its members the judge put back
/// into the same cluster.
pub fn per_cluster_accuracy(
    original: &BTreeMap<String, usize>,
    judged: &BTreeMap<String, usize>,
) -> Result<BTreeMap<usize, f64>> {
    if original.len() != judged.len() || original.keys().zip(judged.keys()).any(|(a, b)| a != b) {
        return Err(Error::invalid(
            "original and judged assignments cover different documents",
        ));
    }
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (d, &c) in original {
        let e = hits.entry(c).or_default();
        e.1 += 1;
        if judged[d] == c {
            e.0 += 1;
        }
    }
    Ok(hits.into_iter().map(|(c, (h, n))| (c, h as f64 / n as f64)).collect())
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("labelings must be non-empty and of equal length"));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ra: HashMap<usize, u64> = HashMap::new();
    let mut rb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(a.len() as u64).max(1.0);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ARI between a clustering and reference labels keyed by doc id; documents
/// missing from the clustering are ignored.
pub fn ari_against(result: &ClusterResult, truth: &BTreeMap<String, usize>) -> Result<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (d, &c) in &result.assignment {
        let t = truth
            .get(d)
            .ok_or_else(|| Error::invalid(format!("document {d:?} has no reference label")))?;
        x.push(c);
        y.push(*t);
    }
    adjusted_rand_index(&x, &y)
}

/// Index over exactly the documents present in a clustering.
pub fn index_for(result: &ClusterResult, embs: &[BinaryEmbedding]) -> Result<InvertedIndex> {
    let kept: Vec<BinaryEmbedding> = embs
        .iter()
        .filter(|e| result.assignment.contains_key(&e.doc_id))
        .cloned()
        .collect();
    build_index(&kept)
}
