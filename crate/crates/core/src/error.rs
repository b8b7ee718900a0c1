use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Shape> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: invalid attribute")]
    InvalidAttr { op: &'static str },
    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("backward called twice without zero_grad")]
    BackwardTwice,
    #[error("unknown node id {0}")]
    UnknownVar(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode schedule needs {needed} steps but the horizon is {horizon}")]
    ScheduleTooLong { needed: usize, horizon: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("empty episode record")]
    EmptyRecord,
    #[error("non-finite objective: {0}")]
    NonFinite(String),
    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
}

pub type Result<T> = core::result::Result<T, Error>;
