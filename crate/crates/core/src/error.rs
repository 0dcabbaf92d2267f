use std::path::PathBuf;

use crate::model::{ConceptId, SceneId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can surface.
///
/// Variants are grouped by the stage that raises them. [`Error::is_input_error`]
/// splits them into "bad input" and "computation failed" for callers that need
/// to map errors onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // Input / format errors.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("missing activation volume: {}", .0.display())]
    MissingActivation(PathBuf),
    #[error("missing segmentation mask: {}", .0.display())]
    MissingMask(PathBuf),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // Dissection.
    #[error("dataset has no images")]
    EmptyDataset,
    #[error("no neuron-concept scores to select from")]
    NoScores,

    // Knowledge graph and core concepts.
    #[error("scene `{0}` has no node in the knowledge graph")]
    SceneNotInKg(String),
    #[error("scene {0} has no images")]
    NoImagesForScene(SceneId),
    #[error("scenes cannot be told apart by {0} sets at any grid percentage")]
    IndistinguishableScenes(&'static str),

    // Embedding and clustering.
    #[error("knowledge graph has no triples")]
    EmptyGraph,
    #[error("concept {0} is not aligned to an embedded knowledge-graph node")]
    UnalignedConcept(ConceptId),
    #[error("cannot form {k} clusters from {n} concepts")]
    KTooLarge { k: usize, n: usize },
    #[error("concept {0} does not belong to any cluster")]
    UnclusteredConcept(ConceptId),
    #[error("baseline interpretability score is zero")]
    ZeroBaseline,

    // Explanation metrics.
    #[error("core concept set is empty")]
    EmptyCoreConcepts,
    #[error("no false predictions to explain")]
    EmptyFalseSet,
    #[error("empty image set: {0}")]
    EmptySet(&'static str),

    // Manipulation.
    #[error("scene {0} has no correctly predicted images")]
    NoTruePredictions(SceneId),
    #[error("unit {unit} out of range (layer has {units} units)")]
    UnitOutOfRange { unit: usize, units: usize },
    #[error("training data contains a single class")]
    SingleClass,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by missing, malformed or inconsistent inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MissingFile(_)
                | Error::MissingActivation(_)
                | Error::MissingMask(_)
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::VocabMismatch(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidParameter(_)
                | Error::EmptyDataset
        )
    }
}
