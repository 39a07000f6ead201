#[path = "support/oracle.rs"]
mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sae_embed::clustering::{
    adjusted_rand_index, align_clusters, cluster_embeddings, jaccard_matrix, per_cluster_accuracy, spectral_cluster,
    targeted_cluster, SimilarityMatrix,
};
use sae_embed::embedding::{binarize, pool_corpus};
use sae_embed::synth::{generate, Plant, SynthSpec};
use sae_embed::BinaryEmbedding;

fn binary(docs: &[sae_embed::DocActivations]) -> Vec<BinaryEmbedding> {
    pool_corpus(docs).unwrap().iter().map(binarize).collect()
}

#[test]
fn noisy_blocks_recovered() {
    for seed in 0..3 {
        let spec = SynthSpec::new(300, 200, 0.0, seed).with_plant(Plant::Blocks {
            first_latent: 0,
            k: 3,
            latents_per_block: 20,
            noise: 0.1,
        });
        let out = generate(&spec).unwrap();
        let embs = binary(&out.datasets[0].docs);
        let r = cluster_embeddings(&embs, 3, seed).unwrap();
        let ari = sae_embed::clustering::ari_against(&r, &out.truth.blocks[0].assignment).unwrap();
        assert!(ari >= 0.95, "seed {seed}: ARI {ari}");
    }
}

#[test]
fn noiseless_blocks_exact() {
    let spec = SynthSpec::new(120, 100, 0.0, 1).with_plant(Plant::Blocks {
        first_latent: 10,
        k: 3,
        latents_per_block: 6,
        noise: 0.0,
    });
    let out = generate(&spec).unwrap();
    let r = cluster_embeddings(&binary(&out.datasets[0].docs), 3, 0).unwrap();
    assert_eq!(
        sae_embed::clustering::ari_against(&r, &out.truth.blocks[0].assignment).unwrap(),
        1.0
    );
}

#[test]
fn targeted_follows_selected_axis() {
    let spec = SynthSpec::new(240, 400, 0.002, 5)
        .with_plant(Plant::Blocks {
            first_latent: 0,
            k: 3,
            latents_per_block: 34,
            noise: 0.05,
        })
        .with_plant(Plant::Blocks {
            first_latent: 200,
            k: 3,
            latents_per_block: 34,
            noise: 0.05,
        });
    let out = generate(&spec).unwrap();
    let embs = binary(&out.datasets[0].docs);
    for (axis, other) in [(0, 1), (1, 0)] {
        let b = &out.truth.blocks[axis];
        let r = targeted_cluster(&embs, &out.catalog, std::slice::from_ref(&b.axis), 100, 3, 0).unwrap();
        let on = sae_embed::clustering::ari_against(&r, &b.assignment).unwrap();
        let off = sae_embed::clustering::ari_against(&r, &out.truth.blocks[other].assignment).unwrap();
        assert!(on >= 0.9, "axis {axis}: {on}");
        assert!(off < 0.2, "axis {axis} leaks the other axis: {off}");
    }
}

#[test]
fn hungarian_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let m: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..5).map(|_| rng.random_range(0.0..100.0)).collect())
            .collect();
        let got: Vec<usize> = align_clusters(&m).unwrap().into_iter().map(Option::unwrap).collect();
        let (best, mass) = oracle::brute_force_assignment(&m);
        assert_eq!(got, best);
        let got_mass: f64 = got.iter().enumerate().map(|(r, &c)| m[r][c]).sum();
        assert!((got_mass - mass).abs() < 1e-9);
    }
}

#[test]
fn ari_matches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let n = rng.random_range(2..60);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let got = adjusted_rand_index(&a, &b).unwrap();
        assert!((got - oracle::ari_exact(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn accuracy_matches_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let orig: std::collections::BTreeMap<String, usize> =
            (0..40).map(|d| (format!("d{d}"), rng.random_range(0..4))).collect();
        let judged: std::collections::BTreeMap<String, usize> =
            orig.keys().map(|d| (d.clone(), rng.random_range(0..4))).collect();
        let acc = per_cluster_accuracy(&orig, &judged).unwrap();
        for (&c, &v) in &acc {
            let members: Vec<&String> = orig.iter().filter(|(_, &x)| x == c).map(|(d, _)| d).collect();
            let kept = members.iter().filter(|d| judged[**d] == c).count();
            assert_eq!(v, kept as f64 / members.len() as f64);
        }
    }
}

#[test]
fn spectral_deterministic_and_label_invariant() {
    let spec = SynthSpec::new(90, 60, 0.01, 3).with_plant(Plant::Blocks {
        first_latent: 0,
        k: 3,
        latents_per_block: 8,
        noise: 0.15,
    });
    let out = generate(&spec).unwrap();
    let embs = binary(&out.datasets[0].docs);
    let s = jaccard_matrix(&embs).unwrap();
    let a = spectral_cluster(&s, 3, 42).unwrap();
    assert_eq!(a, spectral_cluster(&s, 3, 42).unwrap());
    // reversing row order must not change the partition
    let n = s.n();
    let ids: Vec<String> = s.ids().iter().rev().cloned().collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .rev()
        .map(|a| (0..n).rev().map(|b| s.get(a, b)).collect())
        .collect();
    let rev = spectral_cluster(&SimilarityMatrix::from_rows(ids, rows).unwrap(), 3, 42).unwrap();
    let x: Vec<usize> = a.assignment.values().copied().collect();
    let y: Vec<usize> = rev.assignment.values().copied().collect();
    assert_eq!(adjusted_rand_index(&x, &y).unwrap(), 1.0);
}
