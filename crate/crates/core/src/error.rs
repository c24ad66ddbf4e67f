// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("slice index {index} out of range for a {layer_count}-layer encoder (expected 1 <= k < {layer_count})")]
    SliceIndex { index: usize, layer_count: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("degenerate concept '{0}': latent representation has zero norm")]
    DegenerateConcept(String),

    #[error("degenerate concept layer: projection matrix has rank 0")]
    DegenerateLayer,

    #[error("uninterpretable input: latent vector has zero norm")]
    UninterpretableInput,

    #[error("unknown concept '{0}'")]
    UnknownConcept(String),

    #[error("duplicate concept id '{0}'")]
    DuplicateConcept(String),

    #[error(
        "invalid intervention factor {factor} for concept '{id}': factors must be finite and >= 0"
    )]
    InvalidFactor { id: String, factor: f64 },

    #[error("slice ordering: new concept layer at {new} must be deeper than existing layer at {existing}")]
    SliceOrdering { new: usize, existing: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error(
        "frozen prefix violation: prefix parameters or concept matrices changed during welding"
    )]
    FrozenPrefixViolation,

    #[error("divergence at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("search exhausted: reached {reached} of {target} concepts; the ontology has no further reachable concepts")]
    Exhaustion { target: usize, reached: usize },

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 3 for data errors, 4 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateConcept(_)
            | Error::DegenerateLayer
            | Error::UninterpretableInput
            | Error::Divergence { .. }
            | Error::FrozenPrefixViolation => 4,
            _ => 3,
        }
    }

    /// Stable snake_case code used in service error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_configuration",
            Error::SliceIndex { .. } => "slice_index",
            Error::Shape { .. } => "shape",
            Error::DegenerateConcept(_) => "degenerate_concept",
            Error::DegenerateLayer => "degenerate_layer",
            Error::UninterpretableInput => "uninterpretable_input",
            Error::UnknownConcept(_) => "unknown_concept",
            Error::DuplicateConcept(_) => "duplicate_concept",
            Error::InvalidFactor { .. } => "invalid_factor",
            Error::SliceOrdering { .. } => "slice_ordering",
            Error::InvalidBatch(_) => "invalid_batch",
            Error::FrozenPrefixViolation => "frozen_prefix_violation",
            Error::Divergence { .. } => "divergence",
            Error::InvalidCorpus(_) => "invalid_corpus",
            Error::Exhaustion { .. } => "exhaustion",
            Error::DegenerateTask(_) => "degenerate_task",
            Error::InvalidSplit(_) => "invalid_split",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serialization",
        }
    }
}
