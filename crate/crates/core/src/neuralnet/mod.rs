//! Convolutional fusion network: tensor kernels, the model, Adam, the
//! training loop and the parameter file format.
//!
//! Training runs in `f32`; every kernel is generic over [`Scalar`] so the
//! gradient checks can run the same code in `f64`.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod network;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adam::Adam;
pub use io::{load_params, read_params, save_params, write_params};
pub use network::{forward, Architecture, NetworkParams, Workspace};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{
    infer, learning_rate, stack_inputs, train, EpochRecord, TrainConfig, TrainOutcome, INPUT_FRAMES,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged in epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: &'static str },
    #[error("parameter file: {0}")]
    Format(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Assembly(#[from] crate::assembly::AssemblyError),
    #[error(transparent)]
    Metric(#[from] crate::metric::MetricError),
}
