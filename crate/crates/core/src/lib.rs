//! Sparse-autoencoder document embeddings and the analyses built on them:
//! dataset diffing, latent co-occurrence mining, targeted clustering and
//! property-based retrieval.

mod binio;
pub mod catalog;
pub mod clustering;
pub mod correlations;
pub mod diff;
pub mod embedding;
pub mod error;
pub mod formats;
pub mod gateway;
pub mod retrieval;
pub mod sae;
pub mod synth;

pub use catalog::{LatentCatalog, LatentCatalogEntry, LoadMode};
pub use clustering::{ClusterDescription, ClusterResult, SimilarityMatrix};
pub use correlations::{CooccurrenceCounts, CorrelationParams, PairStats};
pub use diff::DiffEntry;
pub use embedding::{BinaryEmbedding, DocActivations, InvertedIndex, SaeEmbedding};
pub use error::{Error, Result};
pub use gateway::{AnnotationResult, AnnotationTask, Gateway, GatewayError, TaskKind};
pub use retrieval::RetrievalRanking;
pub use sae::{ActivationKind, SaeWeights, TokenActivationRecord};
pub use synth::{GroundTruth, Plant, SynthSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
