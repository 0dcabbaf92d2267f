//! Neuron-level manipulation: contribution scores, ablation through the
//! linear head, and a linear SVM over explanation features.

pub mod ablation;
pub mod contribution;
pub mod pe;
pub mod svm;

pub use ablation::{ablate, ablated_logits, ablation_sweep, AblationResult, Direction, SweepRow};
pub use contribution::{contribution_scores, NeuronContribution};
pub use pe::{mrr_feature, PEFeatureVector};
pub use svm::{train_pe_svm, SvmConfig, SvmModel};
