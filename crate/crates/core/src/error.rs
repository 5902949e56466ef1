//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor or vector shapes that must agree did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A novelty detector was asked to fit on an unusable training set.
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    /// Meta-score spread collapsed to zero; every `mu - h*sigma` threshold
    /// is identical and the sweep cannot discriminate.
    #[error("degenerate spread: {0}")]
    DegenerateSpread(String),

    /// A rate (TPR, FPR, CA, ASR) was requested over an empty class.
    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    /// A file did not conform to its declared format.
    #[error("data format: {0}")]
    DataFormat(String),

    /// Fragile-watermark calibration could not find a feasible threshold.
    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    /// Failure talking to an external classifier process. Carries the raw
    /// payload (when one exists) so the operator can see what came back.
    #[error("classifier transport: {kind}: {detail}")]
    Transport { kind: TransportKind, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Timeout,
    MalformedResponse,
    IdMismatch,
    ProcessExit,
}

impl std::fmt::Display for TransportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TransportKind::Timeout => "timeout",
            TransportKind::MalformedResponse => "malformed response",
            TransportKind::IdMismatch => "id mismatch",
            TransportKind::ProcessExit => "process exit",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn transport(kind: TransportKind, detail: impl Into<String>) -> Self {
        Error::Transport {
            kind,
            detail: detail.into(),
        }
    }

    /// True for errors raised on the classifier transport boundary.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
