//! Knowledge-graph embeddings and the concept filter built on them.

pub mod cluster;
pub mod filter;
pub mod transe;

pub use cluster::{cluster_concepts, ConceptClustering};
pub use filter::{concept_filter, gain_percent, iou_gain, IouGain};
pub use transe::{train_transe, EmbeddingTable, TransEConfig};
