use thiserror::Error;

use crate::data::DataError;
use crate::tensor::TensorError;
use crate::weights::WeightsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("input size {height}x{width} is not a multiple of the total stride {stride}")]
    InputSize {
        height: usize,
        width: usize,
        stride: usize,
    },
    #[error("optimizer step without gradients; run a backward pass first")]
    MissingGradient,
    #[error("{0}")]
    Training(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
