//! Minimal tensor/autodiff engine, the time-conditioned U-Net denoiser, and
//! its optimiser.

mod checkpoint;
mod flops;
pub mod kernels;
mod optim;
mod tape;
mod tensor;
mod unet;

pub use checkpoint::Checkpoint;
pub use flops::{estimate_flops, unet_flops};
pub use optim::{AdamConfig, OptimizerState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use unet::{sinusoidal_embedding, DenoiserModel, ParamSet, UNetConfig};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("non-finite value in {pass} pass at {at}")]
    NonFinite { pass: &'static str, at: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}
