use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{path}`")]
    NonFiniteGradient { path: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
}
