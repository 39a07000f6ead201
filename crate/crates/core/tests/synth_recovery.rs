use sae_embed::catalog::LatentCatalog;
use sae_embed::correlations::{find_correlated_pairs, CorrelationParams};
use sae_embed::diff::{diff_pair, DEFAULT_MIN_DELTA};
use sae_embed::embedding::{binarize, build_index, pool_corpus};
use sae_embed::synth::{evaluate_recovery, generate, Plant, RecoveryInputs, SynthSpec};
use sae_embed::{DocActivations, InvertedIndex};

fn index(docs: &[DocActivations]) -> InvertedIndex {
    let embs: Vec<_> = pool_corpus(docs).unwrap().iter().map(binarize).collect();
    build_index(&embs).unwrap()
}

fn pairs(idx: &InvertedIndex, catalog: &LatentCatalog, docs: &[DocActivations]) -> Vec<(u32, u32)> {
    find_correlated_pairs(idx, catalog, &CorrelationParams::injection(), Some(docs))
        .unwrap()
        .iter()
        .map(|p| (p.i, p.j))
        .collect()
}

#[test]
fn background_only_surfaces_nothing() {
    let mut clean = 0;
    for seed in 0..20 {
        let out = generate(&SynthSpec::new(2000, 300, 0.02, seed)).unwrap();
        let docs = &out.datasets[0].docs;
        if pairs(&index(docs), &out.catalog, docs).is_empty() {
            clean += 1;
        }
    }
    assert!(clean >= 19, "{clean}/20 clean runs");
}

#[test]
fn planted_pair_recovered() {
    let spec = SynthSpec::new(5000, 400, 0.01, 3)
        .with_plant(Plant::Pair {
            i: 11,
            j: 12,
            joint_rate: 0.01,
            label_sim: 0.0,
            marginal_i: None,
            marginal_j: None,
        })
        .with_plant(Plant::Pair {
            i: 21,
            j: 22,
            joint_rate: 0.02,
            label_sim: 0.0,
            marginal_i: Some(0.025),
            marginal_j: None,
        })
        .with_plant(Plant::Pair {
            i: 31,
            j: 32,
            joint_rate: 0.02,
            label_sim: 0.9,
            marginal_i: None,
            marginal_j: None,
        });
    let out = generate(&spec).unwrap();
    let docs = &out.datasets[0].docs;
    let found = pairs(&index(docs), &out.catalog, docs);
    let m = evaluate_recovery(
        RecoveryInputs {
            pairs: Some(&found),
            ..Default::default()
        },
        &out.truth,
    )
    .unwrap();
    // the third pair has near-identical labels and must be filtered
    assert_eq!(m.pair_found, vec![true, true, false]);
    assert_eq!(m.pair_precision, Some(1.0));
}

#[test]
fn planted_diff_ranks_first() {
    let spec = SynthSpec::new(2000, 300, 0.02, 4).with_plant(Plant::Diff {
        latent: 9,
        rate_a: 0.4,
        rate_b: 0.05,
    });
    let out = generate(&spec).unwrap();
    let a = index(&out.datasets[0].docs);
    let b = index(&out.datasets[1].docs);
    let entries = diff_pair(&a, &b, DEFAULT_MIN_DELTA).unwrap();
    assert_eq!(entries[0].latent_id, 9);
    let sigma = (0.4 * 0.6 / 2000.0 + 0.05 * 0.95 / 2000.0f64).sqrt();
    assert!((entries[0].delta - 0.35).abs() < 4.0 * sigma);
    let m = evaluate_recovery(
        RecoveryInputs {
            diff: Some(&entries),
            ..Default::default()
        },
        &out.truth,
    )
    .unwrap();
    assert_eq!(m.diff_ranks, vec![Some(1)]);
}

#[test]
fn rates_within_binomial_bounds() {
    let spec = SynthSpec::new(4000, 200, 0.05, 6).with_plant(Plant::Pair {
        i: 1,
        j: 2,
        joint_rate: 0.1,
        label_sim: 0.0,
        marginal_i: Some(0.3),
        marginal_j: Some(0.2),
    });
    let out = generate(&spec).unwrap();
    let t = &out.truth.pairs[0];
    let n = 4000.0f64;
    for (count, rate) in [(t.n_ij, 0.1), (t.n_i, 0.3), (t.n_j, 0.2)] {
        let sigma = (n * rate * (1.0 - rate)).sqrt();
        assert!((count as f64 - n * rate).abs() < 4.0 * sigma, "{count} vs {rate}");
    }
    let idx = index(&out.datasets[0].docs);
    let bg = idx.doc_count(100) as f64;
    assert!((bg - n * 0.05).abs() < 4.0 * (n * 0.05 * 0.95f64).sqrt());
}
