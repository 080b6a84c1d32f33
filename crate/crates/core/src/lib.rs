//! Link-level simulation of a hardware-impaired Rayleigh fading channel and a
//! conditional denoising diffusion model that learns to clean up the images
//! a naive receiver reconstructs from it.
//!
//! The crate is organised bottom-up:
//!
//! - [`link`]: Gray-mapped QAM modem, impaired fading channel, zero-forcing
//!   receiver and a repetition code.
//! - [`schedule`]: variance and conditioning schedules together with the
//!   closed-form conditional reverse coefficients.
//! - [`nn`]: a small reverse-mode autodiff engine, the time-embedded U-Net
//!   denoiser, Adam with an EMA shadow, and the checkpoint container.
//! - [`cdiff`]: conditional forward noising, the training objective, the
//!   training loop and the reverse sampler.
//! - [`data`]: IDX ingestion, a procedural corpus, pair generation through
//!   the link, and the pair container.
//! - [`eval`]: MSE/PSNR, SNR helpers, sweeps with CSV and PGM output.

pub mod cdiff;
pub mod codec;
pub mod data;
pub mod eval;
pub mod link;
pub mod nn;
pub mod rng;
pub mod schedule;

pub use rng::StreamRng;
