//! Fixtures shared by the throughput benches.

use sae_embed::synth::{generate, zipf_corpus, Plant, SynthSpec};
use sae_embed::{BinaryEmbedding, LatentCatalog, SaeEmbedding};

/// Zipf corpus with unit-free defaults matching a mid-sized SAE.
pub fn zipf(n_docs: usize, mean_active: f64) -> Vec<BinaryEmbedding> {
    zipf_corpus(n_docs, 16_384, mean_active, 1.0, 42)
}

/// Pooled synthetic corpus plus its catalog, with one planted relevance latent.
pub fn retrieval_fixture(n_docs: usize) -> (Vec<SaeEmbedding>, LatentCatalog, u32) {
    let spec = SynthSpec::new(n_docs, 2_000, 0.01, 42).with_plant(Plant::Relevance {
        latent: 17,
        n_relevant: n_docs / 20,
    });
    let out = generate(&spec).expect("valid spec");
    let embs = sae_embed::embedding::pool_corpus(&out.datasets[0].docs).expect("pooling");
    (embs, out.catalog, 17)
}
