//! Error types shared across the crate.
//!
//! Three families, matching how callers recover: [`ModelError`] for
//! configuration and shape problems in the math stack, [`PersistError`] for
//! on-disk formats, and [`TrainError`] for failures surfaced by the training
//! loop. The CLI maps these onto distinct exit codes.

use std::fmt;
use std::io;

/// Configuration, shape, or numeric problem inside the model stack.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A named tensor was not found in the parameter store.
    MissingParameter { name: String },
    /// A named tensor exists but has the wrong shape.
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A buffer length does not match what the operation requires.
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// An index fell outside its axis.
    IndexOutOfRange {
        axis: &'static str,
        index: usize,
        size: usize,
    },
    /// A non-finite value appeared where the contract requires finite data.
    NonFinite { stage: &'static str },
    /// More tokens requested than the grid can supply.
    TokenBudget { requested: usize, capacity: usize },
    /// Interpolating samplers need at least a 2 x 2 grid.
    GridTooSmall { height: usize, width: usize },
    /// Strategy name not present in the registry.
    UnknownStrategy { name: String },
    /// A configuration field is outside its documented range.
    InvalidConfig { what: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::MissingParameter { name } => {
                write!(f, "missing parameter `{name}`")
            }
            ModelError::ParameterShape {
                name,
                expected,
                got,
            } => write!(
                f,
                "parameter `{name}` has shape {got:?}, expected {expected:?}"
            ),
            ModelError::LengthMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: length {got}, expected {expected}"),
            ModelError::IndexOutOfRange { axis, index, size } => {
                write!(f, "{axis} index {index} out of range for size {size}")
            }
            ModelError::NonFinite { stage } => {
                write!(f, "non-finite value in {stage}")
            }
            ModelError::TokenBudget {
                requested,
                capacity,
            } => write!(
                f,
                "requested {requested} tokens but the grid has only {capacity} patches"
            ),
            ModelError::GridTooSmall { height, width } => write!(
                f,
                "grid {height}x{width} too small; interpolation needs at least 2x2"
            ),
            ModelError::UnknownStrategy { name } => {
                write!(f, "unknown sampling strategy `{name}`")
            }
            ModelError::InvalidConfig { what } => write!(f, "invalid config: {what}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Failure reading or writing an on-disk artifact (grids, checkpoints).
#[derive(Debug)]
pub enum PersistError {
    Io(io::Error),
    /// The file does not start with the expected magic token.
    BadMagic { expected: &'static str, found: String },
    /// The header parsed but its fields are malformed.
    Header { message: String },
    /// The file ended before the declared payload was complete.
    Truncated { context: String },
    /// Declared and actual record counts or shapes disagree.
    CountMismatch {
        context: String,
        declared: usize,
        found: usize,
    },
    /// Payload contains a non-finite float.
    NonFinite { context: String },
}

impl fmt::Display for PersistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersistError::Io(e) => write!(f, "i/o error: {e}"),
            PersistError::BadMagic { expected, found } => {
                write!(f, "bad magic: expected `{expected}`, found `{found}`")
            }
            PersistError::Header { message } => write!(f, "malformed header: {message}"),
            PersistError::Truncated { context } => {
                write!(f, "truncated file while reading {context}")
            }
            PersistError::CountMismatch {
                context,
                declared,
                found,
            } => write!(f, "{context}: declared {declared}, found {found}"),
            PersistError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
        }
    }
}

impl std::error::Error for PersistError {}

impl From<io::Error> for PersistError {
    fn from(e: io::Error) -> Self {
        PersistError::Io(e)
    }
}

/// Failure surfaced by the training loop.
#[derive(Debug)]
pub enum TrainError {
    Model(ModelError),
    /// The batch loss became non-finite at the given step.
    NonFiniteLoss { step: usize },
    /// A gradient became non-finite; the parameter is named so the run is
    /// diagnosable from the abort message alone.
    NonFiniteGradient { parameter: String, step: usize },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::NonFiniteLoss { step } => {
                write!(f, "non-finite loss at step {step}")
            }
            TrainError::NonFiniteGradient { parameter, step } => {
                write!(f, "non-finite gradient for `{parameter}` at step {step}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}
