//! Knowledge-aware neuron interpretation for scene classifiers.
//!
//! The crate works on exported artifacts rather than a live network: per-image
//! activation volumes of one layer, multi-plane segmentation masks, the
//! classifier's final linear head and a knowledge graph over concept names.
//! From those it
//!
//! - aligns units with concepts by thresholded-activation IoU ([`dissection`]),
//! - derives the core concepts of each scene from the graph and the dataset
//!   ([`knowledge`]),
//! - scores how well a layer's learned concepts match those core concepts
//!   ([`explanation`]),
//! - fuses near-duplicate concepts through graph embeddings and measures the
//!   interpretability gain ([`embedding`]),
//! - ranks units by their contribution to a scene, ablates them through the
//!   linear head and trains a linear SVM on explanation features
//!   ([`manipulation`]).
//!
//! [`synth`] generates a small planted dataset whose correct answers are
//! known by construction.

pub mod dissection;
pub mod embedding;
pub mod error;
pub mod explanation;
pub mod knowledge;
pub mod manifest;
pub mod manipulation;
pub mod model;
pub mod synth;
pub mod tsv;
pub mod volume;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, ImageRecord, Split};
pub use model::{ConceptId, ConceptSet, ConceptVocab, LinearHead, SceneId, SceneVocab};
pub use volume::{ActivationVolume, PixelMask, SegmentationMask};
