//! The five-stage gesture model: float forward/backward, losses, optimizer,
//! training loops, and the parameter container format.
//!
//! Layers are generic over the float type so gradient checks can run in
//! f64 while training runs in f32.

pub mod check;
pub mod container;
pub mod layers;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use container::{read_container, write_container, ContainerPayload, TensorRecord};
pub use net::{
    backward, combine_probabilities, compute_loss, forward, ForwardCtx, ForwardOutput,
    LossTargets, ModelConfig, Tape,
};
pub use optim::{lr_at, Adam};
pub use params::Parameters;
pub use tensor::Tensor;
pub use train::{finetune_epochs, train_epochs, EpochMetrics, TrainConfig, TrainSample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input shape {got:?} does not match config expectation {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite activation detected in {stage}")]
    NonFinite { stage: &'static str },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
    #[error("parameter container: {0}")]
    Container(String),
    #[error(transparent)]
    Quant(#[from] crate::quant::QuantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
