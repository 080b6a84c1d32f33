//! Reconstruction metrics, the benchmark sweeps and their CSV/PGM output.

mod pgm;
mod sweep;

pub use pgm::{read_pgm, triptych, write_pgm, Gray};
pub use sweep::{
    quartiles, reconstruct, sweep_impairment, sweep_snr, ImpairmentRecord, PointResult, SweepSetup,
};

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::cdiff::CdiffError;
use crate::data::DataError;
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Cdiff(#[from] CdiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean squared difference. Inputs are expected in the `[0, 1]` pixel domain.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / mse)`; `+inf` when the images are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// MSE between two `[-1, 1]` tensors, measured in the `[0, 1]` domain.
pub fn unit_mse(a: &Tensor, b: &Tensor) -> Result<f64, EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    mse(&to_unit_interval(a.data()), &to_unit_interval(b.data()))
}

pub fn to_unit_interval(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x + 1.0) / 2.0).collect()
}

/// `Γ = 10 log10(P / σ²)` in dB.
pub fn transmit_snr(power: f64, sigma2: f64) -> Result<f64, EvalError> {
    if !(power > 0.0) {
        return Err(EvalError::NonPositive("power"));
    }
    if !(sigma2 > 0.0) {
        return Err(EvalError::NonPositive("noise variance"));
    }
    Ok(10.0 * (power / sigma2).log10())
}

/// Noise variance giving `snr_db` at transmit power `power`.
pub fn sigma2_for(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// One sweep point. PSNR columns are means of per-image PSNR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub snr_db: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub code_rate: f64,
    pub mse_naive: f64,
    pub mse_cdiff: f64,
    pub psnr_naive: f64,
    pub psnr_cdiff: f64,
    pub n_images: usize,
    pub seed: u64,
}

pub const METRIC_HEADER: &str =
    "experiment,snr_db,kappa_t,kappa_r,code_rate,mse_naive,mse_cdiff,psnr_naive,psnr_cdiff,n_images,seed";

/// Writes records with a header row, in the given order.
pub fn write_csv<W: Write, R: Serialize>(records: &[R], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
