use dpn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DpnError {
    pub fn shape(what: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        DpnError::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DpnError>;
