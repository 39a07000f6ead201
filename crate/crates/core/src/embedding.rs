//! Per-document SAE embeddings and the inverted index over their active
//! latents.
//!
//! A latent is *active* in a document when any token activates it with a
//! value strictly greater than zero. Frequencies, co-occurrences and Jaccard
//! similarities all build on that presence semantics.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::TokenActivationRecord;

/// Token-level activations of one document, token indices strictly increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DocActivations {
    pub doc_id: String,
    pub tokens: Vec<TokenActivationRecord>,
}

impl DocActivations {
    pub fn validate(&self, d_sae: Option<u32>) -> Result<()> {
        let mut prev: Option<u32> = None;
        for t in &self.tokens {
            if let Some(p) = prev {
                if t.token_index <= p {
                    return Err(Error::invalid(format!(
                        "doc {:?}: token indices not strictly increasing",
                        self.doc_id
                    )));
                }
            }
            t.validate(d_sae)?;
            prev = Some(t.token_index);
        }
        Ok(())
    }

    /// Token indices where `latent` is active.
    pub fn positions_of(&self, latent: u32) -> Vec<u32> {
        self.tokens
            .iter()
            .filter(|t| t.entries.binary_search_by_key(&latent, |e| e.0).is_ok())
            .map(|t| t.token_index)
            .collect()
    }
}

/// Max-pooled sparse vector; ids strictly increasing, values > 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SaeEmbedding {
    pub doc_id: String,
    pub entries: Vec<(u32, f32)>,
}

impl SaeEmbedding {
    pub fn value(&self, latent: u32) -> Option<f32> {
        self.entries
            .binary_search_by_key(&latent, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryEmbedding {
    pub doc_id: String,
    /// Sorted, unique.
    pub active: Vec<u32>,
}

/// Per-latent max over the document's tokens.
pub fn pool_document(doc: &DocActivations) -> Result<SaeEmbedding> {
    if doc.tokens.is_empty() {
        return Err(Error::invalid(format!(
            "doc {:?} has an empty token sequence",
            doc.doc_id
        )));
    }
    let mut pooled: BTreeMap<u32, f32> = BTreeMap::new();
    for token in &doc.tokens {
        for &(id, v) in &token.entries {
            if v > 0.0 {
                pooled.entry(id).and_modify(|m| *m = m.max(v)).or_insert(v);
            }
        }
    }
    Ok(SaeEmbedding {
        doc_id: doc.doc_id.clone(),
        entries: pooled.into_iter().collect(),
    })
}

pub fn pool_corpus(docs: &[DocActivations]) -> Result<Vec<SaeEmbedding>> {
    docs.par_iter().map(pool_document).collect()
}

pub fn binarize(e: &SaeEmbedding) -> BinaryEmbedding {
    BinaryEmbedding {
        doc_id: e.doc_id.clone(),
        active: e.entries.iter().filter(|(_, v)| *v > 0.0).map(|(i, _)| *i).collect(),
    }
}

pub fn filter_latents(e: &SaeEmbedding, keep: &BTreeSet<u32>) -> SaeEmbedding {
    SaeEmbedding {
        doc_id: e.doc_id.clone(),
        entries: e.entries.iter().filter(|(i, _)| keep.contains(i)).copied().collect(),
    }
}

/// Presence index over a corpus: forward lists (doc → active latents) and
/// postings (latent → doc ordinals), both sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    forward: Vec<Vec<u32>>,
    postings: Vec<Vec<u32>>,
}

impl InvertedIndex {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    /// Active latents of a document.
    pub fn active(&self, ordinal: usize) -> &[u32] {
        &self.forward[ordinal]
    }

    pub fn postings(&self, latent: u32) -> &[u32] {
        self.postings.get(latent as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_count(&self, latent: u32) -> usize {
        self.postings(latent).len()
    }

    /// One past the largest latent id seen.
    pub fn latent_bound(&self) -> u32 {
        self.postings.len() as u32
    }

    /// Latents active in at least one document, ascending.
    pub fn latents(&self) -> impl Iterator<Item = u32> + '_ {
        self.postings
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(i, _)| i as u32)
    }

    pub fn to_embeddings(&self) -> Vec<BinaryEmbedding> {
        let mut active: Vec<Vec<u32>> = vec![Vec::new(); self.n_docs()];
        for (latent, docs) in self.postings.iter().enumerate() {
            for &d in docs {
                active[d as usize].push(latent as u32);
            }
        }
        self.doc_ids
            .iter()
            .cloned()
            .zip(active)
            .map(|(doc_id, active)| BinaryEmbedding { doc_id, active })
            .collect()
    }

    /// Sub-index over the given ordinals, in the given order.
    pub fn subset(&self, ordinals: &[usize]) -> InvertedIndex {
        let forward: Vec<Vec<u32>> = ordinals.iter().map(|&o| self.forward[o].clone()).collect();
        let doc_ids = ordinals.iter().map(|&o| self.doc_ids[o].clone()).collect();
        InvertedIndex::from_parts(doc_ids, forward)
    }

    fn from_parts(doc_ids: Vec<String>, forward: Vec<Vec<u32>>) -> Self {
        let bound = forward
            .iter()
            .filter_map(|a| a.last())
            .max()
            .map(|&m| m as usize + 1)
            .unwrap_or(0);
        let mut postings: Vec<Vec<u32>> = vec![Vec::new(); bound];
        for (ordinal, active) in forward.iter().enumerate() {
            for &l in active {
                postings[l as usize].push(ordinal as u32);
            }
        }
        Self {
            doc_ids,
            forward,
            postings,
        }
    }
}

pub fn build_index(embs: &[BinaryEmbedding]) -> Result<InvertedIndex> {
    let mut seen = HashSet::with_capacity(embs.len());
    for e in embs {
        if !seen.insert(e.doc_id.as_str()) {
            return Err(Error::DuplicateDoc(e.doc_id.clone()));
        }
        if e.active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "doc {:?}: active set not sorted/unique",
                e.doc_id
            )));
        }
    }
    Ok(InvertedIndex::from_parts(
        embs.iter().map(|e| e.doc_id.clone()).collect(),
        embs.iter().map(|e| e.active.clone()).collect(),
    ))
}

/// Fraction of documents in which the latent is active.
pub fn latent_frequency(idx: &InvertedIndex, latent: u32) -> Result<f64> {
    if idx.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(idx.doc_count(latent) as f64 / idx.n_docs() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(i: u32, e: &[(u32, f32)]) -> TokenActivationRecord {
        TokenActivationRecord::new(i, e.to_vec()).unwrap()
    }

    fn bin(id: &str, a: &[u32]) -> BinaryEmbedding {
        BinaryEmbedding {
            doc_id: id.into(),
            active: a.to_vec(),
        }
    }

    #[test]
    fn pool_single_token() {
        let d = DocActivations {
            doc_id: "a".into(),
            tokens: vec![tok(0, &[(5, 0.4)])],
        };
        assert_eq!(pool_document(&d).unwrap().entries, vec![(5, 0.4)]);
    }

    #[test]
    fn pool_takes_max() {
        let d = DocActivations {
            doc_id: "a".into(),
            tokens: vec![tok(0, &[(7, 0.2)]), tok(1, &[(7, 0.7)]), tok(2, &[(7, 0.1)])],
        };
        assert_eq!(pool_document(&d).unwrap().entries, vec![(7, 0.7)]);
    }

    #[test]
    fn pool_empty_tokens_is_error() {
        let d = DocActivations {
            doc_id: "a".into(),
            tokens: vec![],
        };
        assert!(pool_document(&d).is_err());
    }

    #[test]
    fn binarize_basic() {
        let e = SaeEmbedding {
            doc_id: "x".into(),
            entries: vec![(3, 0.01), (9, 2.0)],
        };
        assert_eq!(binarize(&e).active, vec![3, 9]);
        assert!(binarize(&SaeEmbedding::default()).active.is_empty());
    }

    #[test]
    fn index_small() {
        let idx = build_index(&[bin("A", &[1]), bin("B", &[1, 2])]).unwrap();
        assert_eq!(idx.postings(1), &[0, 1]);
        assert_eq!(idx.postings(2), &[1]);
        assert_eq!(idx.postings(0), &[] as &[u32]);
        assert_eq!(idx.n_docs(), 2);
    }

    #[test]
    fn index_empty() {
        let idx = build_index(&[]).unwrap();
        assert_eq!(idx.n_docs(), 0);
        assert!(matches!(latent_frequency(&idx, 0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn index_duplicate_doc() {
        assert!(matches!(
            build_index(&[bin("A", &[1]), bin("A", &[2])]),
            Err(Error::DuplicateDoc(_))
        ));
    }

    #[test]
    fn frequency_basic() {
        let embs: Vec<_> = (0..10)
            .map(|i| bin(&i.to_string(), if i < 3 { &[4] } else { &[] }))
            .collect();
        let idx = build_index(&embs).unwrap();
        assert_eq!(latent_frequency(&idx, 4).unwrap(), 0.3);
        assert_eq!(latent_frequency(&idx, 99).unwrap(), 0.0);
    }

    #[test]
    fn filter_identity_and_empty() {
        let e = SaeEmbedding {
            doc_id: "x".into(),
            entries: vec![(1, 0.5), (4, 1.0)],
        };
        let all: BTreeSet<u32> = [1, 4].into();
        assert_eq!(filter_latents(&e, &all), e);
        assert!(filter_latents(&e, &BTreeSet::new()).entries.is_empty());
    }

    fn arb_doc() -> impl Strategy<Value = DocActivations> {
        proptest::collection::vec(proptest::collection::btree_map(0u32..40, 0.01f32..5.0, 0..6), 1..12).prop_map(
            |toks| DocActivations {
                doc_id: "d".into(),
                tokens: toks
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| TokenActivationRecord {
                        token_index: i as u32,
                        entries: m.into_iter().collect(),
                    })
                    .collect(),
            },
        )
    }

    proptest! {
        #[test]
        fn pool_permutation_invariant(doc in arb_doc(), rot in 0usize..12) {
            let mut shuffled = doc.clone();
            let n = shuffled.tokens.len();
            shuffled.tokens.rotate_left(rot % n);
            // pooling ignores token order, so re-indexing is not needed
            prop_assert_eq!(pool_document(&doc).unwrap(), pool_document(&shuffled).unwrap());
        }

        #[test]
        fn binarize_scale_invariant(doc in arb_doc(), c in 0.01f32..100.0) {
            let mut scaled = doc.clone();
            for t in &mut scaled.tokens {
                for e in &mut t.entries {
                    e.1 *= c;
                }
            }
            let a = binarize(&pool_document(&doc).unwrap());
            let b = binarize(&pool_document(&scaled).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn index_round_trip(sets in proptest::collection::vec(
            proptest::collection::btree_set(0u32..30, 0..8), 0..40)) {
            let embs: Vec<BinaryEmbedding> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| BinaryEmbedding { doc_id: format!("d{i}"), active: s.iter().copied().collect() })
                .collect();
            let idx = build_index(&embs).unwrap();
            prop_assert_eq!(idx.to_embeddings(), embs);
        }
    }
}
