//! Conditional diffusion: forward noising toward the degraded observation,
//! the training objective and loop, and the conditional reverse sampler.

use std::io::Write;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{AdamConfig, DenoiserModel, NnError, OptimizerState, Tape, Tensor};
use crate::schedule::{LambdaShape, ScheduleError, ScheduleTable};
use crate::StreamRng;

#[derive(Debug, Error)]
pub enum CdiffError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("pair values outside [-1, 1]")]
    Range,
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("model was trained with schedule {found:?}, sampler uses {expected:016x}")]
    ScheduleMismatch { expected: u64, found: Option<u64> },
    #[error("training diverged at step {step} (epoch {epoch}): {source}")]
    Diverged {
        step: u64,
        epoch: usize,
        #[source]
        source: NnError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairMeta {
    pub snr_db: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub seed: u64,
}

/// A clean image and its reconstruction by the naive receiver, both
/// `[1, H, W]` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    x0: Tensor,
    xhat: Tensor,
    pub meta: PairMeta,
}

impl SamplePair {
    pub fn new(x0: Tensor, xhat: Tensor, meta: PairMeta) -> Result<Self, CdiffError> {
        if x0.shape() != xhat.shape() || x0.shape().len() != 3 || x0.shape()[0] != 1 {
            return Err(CdiffError::Shape(format!(
                "pair shapes {:?} and {:?}, expected equal [1, H, W]",
                x0.shape(),
                xhat.shape()
            )));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (-1.0..=1.0).contains(v));
        if !in_range(&x0) || !in_range(&xhat) {
            return Err(CdiffError::Range);
        }
        Ok(Self { x0, xhat, meta })
    }

    pub fn x0(&self) -> &Tensor {
        &self.x0
    }

    pub fn xhat(&self) -> &Tensor {
        &self.xhat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            ema_decay: 0.999,
            beta_start: 1e-4,
            beta_end: 0.0095,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CdiffError> {
        let bad = |m: &str| Err(CdiffError::Config(m.into()));
        if self.steps < 2 {
            return bad("steps must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ScheduleTable, CdiffError> {
        Ok(ScheduleTable::build(self.steps, self.beta_start, self.beta_end, LambdaShape::Linear)?)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), CdiffError> {
    if a.shape() != b.shape() {
        return Err(CdiffError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn step_ok(tbl: &ScheduleTable, t: usize) -> Result<(), CdiffError> {
    if t == 0 || t > tbl.steps() {
        return Err(ScheduleError::StepOutOfRange { t, steps: tbl.steps() }.into());
    }
    Ok(())
}

/// Mean and noise scale of `q(x_t | x0, x̂)`: returns
/// `((1-λ)√ᾱ, λ√ᾱ, √δ)`.
pub fn forward_coeffs(tbl: &ScheduleTable, t: usize) -> (f64, f64, f64) {
    let sab = tbl.alpha_bar(t).sqrt();
    let l = tbl.lambda(t);
    ((1.0 - l) * sab, l * sab, tbl.delta(t).sqrt())
}

/// Draws `x_t` from the conditional forward marginal. Returns `(x_t, ε)`.
pub fn forward_diffuse_cond(
    x0: &Tensor,
    xhat: &Tensor,
    t: usize,
    tbl: &ScheduleTable,
    rng: &mut StreamRng,
) -> Result<(Tensor, Tensor), CdiffError> {
    same_shape(x0, xhat)?;
    step_ok(tbl, t)?;
    let mut eps = Tensor::zeros(x0.shape());
    rng.fill_normal(eps.data_mut());
    let xt = diffuse_with(x0, xhat, &eps, t, tbl);
    Ok((xt, eps))
}

fn diffuse_with(x0: &Tensor, xhat: &Tensor, eps: &Tensor, t: usize, tbl: &ScheduleTable) -> Tensor {
    let (a, b, s) = forward_coeffs(tbl, t);
    let mut out = Tensor::zeros(x0.shape());
    for (((o, &x), &h), &e) in out.data_mut().iter_mut().zip(x0.data()).zip(xhat.data()).zip(eps.data()) {
        *o = a * x + b * h + s * e;
    }
    out
}

/// Coefficients `(c_r, c_ε)` of the regression target
/// `c_r·(x̂ - x0) + c_ε·ε`.
pub fn target_coeffs(tbl: &ScheduleTable, t: usize) -> (f64, f64) {
    let ab = tbl.alpha_bar(t);
    let s = (1.0 - ab).sqrt();
    (tbl.lambda(t) * ab.sqrt() / s, tbl.delta(t).sqrt() / s)
}

pub fn training_target(
    x0: &Tensor,
    xhat: &Tensor,
    eps: &Tensor,
    t: usize,
    tbl: &ScheduleTable,
) -> Result<Tensor, CdiffError> {
    same_shape(x0, xhat)?;
    same_shape(x0, eps)?;
    step_ok(tbl, t)?;
    let (cr, ce) = target_coeffs(tbl, t);
    let mut out = Tensor::zeros(x0.shape());
    for (((o, &x), &h), &e) in out.data_mut().iter_mut().zip(x0.data()).zip(xhat.data()).zip(eps.data()) {
        *o = cr * (h - x) + ce * e;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

pub fn write_loss_csv<W: Write>(records: &[LossRecord], out: W) -> Result<(), CdiffError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub enum TrainEvent<'a> {
    Step(LossRecord),
    EpochEnd {
        epoch: usize,
        mean_loss: f64,
        model: &'a DenoiserModel,
        optimizer: &'a OptimizerState,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
    pub stopped_early: bool,
}

/// Stacks `[1, H, W]` images into `[B, 1, H, W]`.
pub fn batch(images: &[Tensor]) -> Result<Tensor, CdiffError> {
    let s = Tensor::stack(images)?;
    let mut shape = s.shape().to_vec();
    shape.insert(1, 1);
    Ok(Tensor::new(shape, s.into_data())?)
}

/// Runs `epochs · ⌈N/B⌉` optimiser steps unless `observer` breaks.
///
/// Each example in a batch gets its own uniformly drawn `t`. On a
/// non-finite forward or backward pass the update is skipped, `model` and
/// `opt` keep their last finite state and [`CdiffError::Diverged`] is
/// returned.
pub fn train<F>(
    data: &[SamplePair],
    cfg: &TrainConfig,
    tbl: &ScheduleTable,
    model: &mut DenoiserModel,
    opt: &mut OptimizerState,
    mut observer: F,
) -> Result<TrainReport, CdiffError>
where
    F: FnMut(TrainEvent<'_>) -> ControlFlow<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(CdiffError::EmptyDataset);
    }
    if model.config().steps != tbl.steps() {
        return Err(CdiffError::Config(format!(
            "model built for {} steps, schedule has {}",
            model.config().steps,
            tbl.steps()
        )));
    }
    let shape = data[0].x0.shape().to_vec();
    if let Some(p) = data.iter().find(|p| p.x0.shape() != shape.as_slice()) {
        return Err(CdiffError::Shape(format!("pair of shape {:?} among {:?}", p.x0.shape(), shape)));
    }
    model.bind_schedule(tbl.fingerprint());

    let mut rng = StreamRng::new(cfg.seed).split_named("train");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x0s = Vec::with_capacity(chunk.len());
            let mut xhats = Vec::with_capacity(chunk.len());
            let mut xts = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            let mut ts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &data[i];
                let t = rng.uniform_int(1, tbl.steps());
                let (xt, eps) = forward_diffuse_cond(&p.x0, &p.xhat, t, tbl, &mut rng)?;
                targets.push(training_target(&p.x0, &p.xhat, &eps, t, tbl)?);
                xts.push(xt);
                x0s.push(p.x0.clone());
                xhats.push(p.xhat.clone());
                ts.push(t);
            }
            let xt = batch(&xts)?;
            let xhat = batch(&xhats)?;
            let target = batch(&targets)?;

            step += 1;
            let diverged = |e| match e {
                NnError::NonFinite { .. } => CdiffError::Diverged { step, epoch, source: e },
                e => CdiffError::Nn(e),
            };
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &xt, &xhat, &ts).map_err(diverged)?;
            let tgt = tape.leaf(target);
            let loss = tape.mse(pred, tgt)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(diverged(NnError::NonFinite {
                    pass: "forward",
                    at: "loss".into(),
                }));
            }
            let grads = tape.backward(loss).map_err(diverged)?;
            opt.adam_step(model, &grads.into_params())?;

            let rec = LossRecord { step, epoch, loss: value };
            losses.push(rec);
            epoch_loss += value;
            batches += 1;
            if observer(TrainEvent::Step(rec)).is_break() {
                return Ok(TrainReport {
                    losses,
                    stopped_early: true,
                });
            }
        }
        let ev = TrainEvent::EpochEnd {
            epoch,
            mean_loss: epoch_loss / batches as f64,
            model,
            optimizer: opt,
        };
        if observer(ev).is_break() && epoch < cfg.epochs {
            return Ok(TrainReport {
                losses,
                stopped_early: true,
            });
        }
    }
    Ok(TrainReport {
        losses,
        stopped_early: false,
    })
}

/// Standard deviation of the fresh noise added by each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseNoise {
    /// `√δ_t`.
    Marginal,
    /// `√(δ_{t|t-1} δ_{t-1} / δ_t)`, the spread of the Gaussian bridge.
    #[default]
    Posterior,
}

impl ReverseNoise {
    pub fn std(self, tbl: &ScheduleTable, t: usize) -> f64 {
        match self {
            ReverseNoise::Marginal => tbl.delta(t).sqrt(),
            ReverseNoise::Posterior => tbl.posterior_var(t).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    /// Start from the mean of `x_T` and add no noise on the way down.
    pub deterministic: bool,
    pub noise: ReverseNoise,
}

/// One reverse update,
/// `x_{t-1} = ψ_x x_t + ψ_x̂ x̂ - ψ_ε ε_θ + s_t z`, with `z` ignored at `t = 1`.
pub fn reverse_step(
    tbl: &ScheduleTable,
    t: usize,
    x_t: &[f64],
    xhat: &[f64],
    eps_pred: &[f64],
    z: Option<&[f64]>,
    noise: ReverseNoise,
) -> Result<Vec<f64>, CdiffError> {
    let c = tbl.reverse_coeffs(t)?;
    if xhat.len() != x_t.len() || eps_pred.len() != x_t.len() || z.is_some_and(|z| z.len() != x_t.len()) {
        return Err(CdiffError::Shape("reverse step operands differ in length".into()));
    }
    let mut out: Vec<f64> = (0..x_t.len())
        .map(|i| c.x * x_t[i] + c.xhat * xhat[i] - c.eps * eps_pred[i])
        .collect();
    if let (Some(z), true) = (z, t > 1) {
        let s = noise.std(tbl, t);
        for (o, zi) in out.iter_mut().zip(z) {
            *o += s * zi;
        }
    }
    Ok(out)
}

/// Reconstructs `x0` from a batch `x̂` of shape `[B, 1, H, W]`.
///
/// Every image draws its noise from `rng.split(i)`, so the result for one
/// image does not depend on the rest of the batch. Output is clamped to
/// `[-1, 1]`.
pub fn sample(
    xhat: &Tensor,
    tbl: &ScheduleTable,
    model: &DenoiserModel,
    rng: &StreamRng,
    opts: SampleOptions,
) -> Result<Tensor, CdiffError> {
    let fp = tbl.fingerprint();
    if model.trained_with() != Some(fp) || model.config().steps != tbl.steps() {
        return Err(CdiffError::ScheduleMismatch {
            expected: fp,
            found: model.trained_with(),
        });
    }
    let shape = xhat.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(CdiffError::Shape(format!("expected [B, 1, H, W], got {shape:?}")));
    }
    let b = shape[0];
    let per = shape[2] * shape[3];
    let mut streams: Vec<StreamRng> = (0..b).map(|i| rng.split(i as u64)).collect();
    let big_t = tbl.steps();

    let m = tbl.alpha_bar(big_t).sqrt();
    let s = tbl.delta(big_t).sqrt();
    let mut x = Tensor::zeros(shape);
    let mut z = vec![0.0; per];
    for (i, stream) in streams.iter_mut().enumerate() {
        let xs = &mut x.data_mut()[i * per..(i + 1) * per];
        let hs = &xhat.data()[i * per..(i + 1) * per];
        if !opts.deterministic {
            stream.fill_normal(&mut z);
        }
        for j in 0..per {
            xs[j] = m * hs[j] + s * z[j];
        }
    }

    let mut zs = vec![0.0; b * per];
    for t in (1..=big_t).rev() {
        let ts = vec![t; b];
        let eps = model.predict(&x, xhat, &ts)?;
        let noise = if !opts.deterministic && t > 1 {
            for (i, stream) in streams.iter_mut().enumerate() {
                stream.fill_normal(&mut zs[i * per..(i + 1) * per]);
            }
            Some(zs.as_slice())
        } else {
            None
        };
        let next = reverse_step(tbl, t, x.data(), xhat.data(), eps.data(), noise, opts.noise)?;
        x = Tensor::new(shape.to_vec(), next)?;
    }
    for v in x.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::UNetConfig;

    fn toy() -> ScheduleTable {
        ScheduleTable::from_arrays(&[0.1, 0.2, 0.3, 0.4], &[0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    fn zero_lambda(steps: usize) -> ScheduleTable {
        ScheduleTable::build(steps, 1e-4, 0.02, LambdaShape::Zero).unwrap()
    }

    fn img(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, v.len()], v.to_vec()).unwrap()
    }

    fn tiny(steps: usize) -> UNetConfig {
        UNetConfig {
            widths: vec![4, 8],
            time_dim: 8,
            steps,
            zero_init_output: true,
        }
    }

    #[test]
    fn toy_target_coefficients() {
        let tbl = toy();
        let (cr, ce) = target_coeffs(&tbl, 2);
        assert!((cr - 0.801784).abs() < 1e-6, "{cr}");
        assert!((ce - 0.597614).abs() < 1e-6, "{ce}");
    }

    #[test]
    fn zero_lambda_target_is_noise() {
        let tbl = zero_lambda(20);
        let mut rng = StreamRng::new(4);
        let x0 = img(&[0.3, -0.2, 0.9]);
        let xhat = img(&[-0.5, 0.1, 0.0]);
        for t in 1..=20 {
            let (xt, eps) = forward_diffuse_cond(&x0, &xhat, t, &tbl, &mut rng).unwrap();
            let tgt = training_target(&x0, &xhat, &eps, t, &tbl).unwrap();
            for (a, b) in tgt.data().iter().zip(eps.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let ab = tbl.alpha_bar(t);
            for i in 0..3 {
                let want = ab.sqrt() * x0.data()[i] + (1.0 - ab).sqrt() * eps.data()[i];
                assert!((xt.data()[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_pair_target_is_scaled_noise() {
        let tbl = toy();
        let x = img(&[0.1, 0.2]);
        let eps = img(&[1.0, -2.0]);
        let tgt = training_target(&x, &x, &eps, 3, &tbl).unwrap();
        let k = (tbl.delta(3) / (1.0 - tbl.alpha_bar(3))).sqrt();
        assert!((tgt.data()[1] + 2.0 * k).abs() < 1e-15);
    }

    fn moments(scale: impl Fn(f64) -> f64) -> Vec<(f64, f64, f64, f64)> {
        let tbl = ScheduleTable::build(50, 1e-3, 0.04, LambdaShape::Linear).unwrap();
        let (x0, xh) = (0.6, -0.4);
        let mut rng = StreamRng::new(9);
        let n = 100_000;
        [1, 25, 50]
            .iter()
            .map(|&t| {
                let (a, b, _) = forward_coeffs(&tbl, t);
                let s = scale(tbl.delta(t));
                let (mut sum, mut sq) = (0.0, 0.0);
                for _ in 0..n {
                    let v = a * x0 + b * xh + s * rng.normal();
                    sum += v;
                    sq += v * v;
                }
                let mean = sum / n as f64;
                (mean, sq / n as f64 - mean * mean, a * x0 + b * xh, tbl.delta(t))
            })
            .collect()
    }

    #[test]
    fn forward_moments_match() {
        let tbl = ScheduleTable::build(50, 1e-3, 0.04, LambdaShape::Linear).unwrap();
        let x0 = Tensor::new(vec![100_000], vec![0.6; 100_000]).unwrap();
        let xh = Tensor::new(vec![100_000], vec![-0.4; 100_000]).unwrap();
        let mut rng = StreamRng::new(2);
        for t in [1, 25, 50] {
            let (xt, _) = forward_diffuse_cond(&x0, &xh, t, &tbl, &mut rng).unwrap();
            let n = xt.numel() as f64;
            let mean = xt.data().iter().sum::<f64>() / n;
            let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let (a, b, _) = forward_coeffs(&tbl, t);
            let want = 0.6 * a - 0.4 * b;
            assert!((mean - want).abs() / want.abs() < 0.02, "t={t} mean {mean} vs {want}");
            assert!((var / tbl.delta(t) - 1.0).abs() < 0.02, "t={t}");
        }
    }

    #[test]
    fn noise_scale_is_root_delta() {
        for (_, var, _, delta) in moments(f64::sqrt) {
            assert!((var / delta - 1.0).abs() < 0.02);
        }
        // scaling ε by δ itself understates the marginal variance
        let off = moments(|d| d);
        assert!(off.iter().all(|&(_, var, _, delta)| (var / delta - 1.0).abs() > 0.02));
    }

    #[test]
    fn reverse_step_is_affine() {
        let tbl = ScheduleTable::build(30, 0.01, 0.1, LambdaShape::Linear).unwrap();
        let mut rng = StreamRng::new(11);
        let mut v = |n| {
            let mut out = vec![0.0; n];
            rng.fill_normal(&mut out);
            out
        };
        let n = 16;
        let (x1, h1, e1, z1) = (v(n), v(n), v(n), v(n));
        let (x2, h2, e2, z2) = (v(n), v(n), v(n), v(n));
        let (a, b) = (0.7, -1.3);
        let mix = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
        for t in [1, 2, 15, 30] {
            for noise in [ReverseNoise::Marginal, ReverseNoise::Posterior] {
                let r1 = reverse_step(&tbl, t, &x1, &h1, &e1, Some(&z1), noise).unwrap();
                let r2 = reverse_step(&tbl, t, &x2, &h2, &e2, Some(&z2), noise).unwrap();
                let r = reverse_step(
                    &tbl,
                    t,
                    &mix(&x1, &x2),
                    &mix(&h1, &h2),
                    &mix(&e1, &e2),
                    Some(&mix(&z1, &z2)),
                    noise,
                )
                .unwrap();
                for i in 0..n {
                    assert!((r[i] - (a * r1[i] + b * r2[i])).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_lambda_zero_model_step() {
        let tbl = zero_lambda(10);
        let x = [0.4, -0.1];
        let h = [0.9, 0.9];
        let z = [1.0, -0.5];
        for t in 2..=10 {
            let r = reverse_step(&tbl, t, &x, &h, &[0.0, 0.0], Some(&z), ReverseNoise::Marginal).unwrap();
            let mean = reverse_step(&tbl, t, &x, &h, &[0.0, 0.0], None, ReverseNoise::Marginal).unwrap();
            let sa = tbl.alpha(t).sqrt();
            for i in 0..2 {
                assert!((mean[i] - x[i] / sa).abs() < 1e-12);
                assert!((r[i] - x[i] / sa - tbl.delta(t).sqrt() * z[i]).abs() < 1e-12);
            }
        }
        let last = reverse_step(&tbl, 1, &x, &h, &[0.0, 0.0], Some(&z), ReverseNoise::Marginal).unwrap();
        assert!((last[0] - x[0] / tbl.alpha(1).sqrt()).abs() < 1e-12);
    }

    fn pairs(n: usize, seed: u64) -> Vec<SamplePair> {
        let mut rng = StreamRng::new(seed);
        (0..n)
            .map(|_| {
                let mut v = vec![0.0; 64];
                for p in v.iter_mut() {
                    *p = rng.uniform(-1.0, 1.0);
                }
                let x = Tensor::new(vec![1, 8, 8], v).unwrap();
                SamplePair::new(x.clone(), x, PairMeta::default()).unwrap()
            })
            .collect()
    }

    #[test]
    fn initial_loss_is_mean_square_target() {
        let tbl = toy();
        let data = pairs(3, 1);
        let cfg = TrainConfig {
            steps: 4,
            epochs: 1,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut model = DenoiserModel::new(tiny(4), 0).unwrap();
        let mut opt = OptimizerState::new(&model, cfg.adam(), 0.9);

        // replay the loop's draws to obtain the targets
        let mut rng = StreamRng::new(cfg.seed).split_named("train");
        let mut order: Vec<usize> = (0..3).collect();
        order.shuffle(&mut rng);
        let mut sq = 0.0;
        for &i in &order {
            let t = rng.uniform_int(1, 4);
            let (_, eps) = forward_diffuse_cond(data[i].x0(), data[i].xhat(), t, &tbl, &mut rng).unwrap();
            let tgt = training_target(data[i].x0(), data[i].xhat(), &eps, t, &tbl).unwrap();
            sq += tgt.data().iter().map(|v| v * v).sum::<f64>();
        }
        let report = train(&data, &cfg, &tbl, &mut model, &mut opt, |_| ControlFlow::Continue(())).unwrap();
        let want = sq / (3.0 * 64.0);
        assert!((report.losses[0].loss - want).abs() < 1e-12);
    }

    #[test]
    fn overfits_single_pair() {
        let tbl = ScheduleTable::build(10, 0.02, 0.2, LambdaShape::Linear).unwrap();
        let data = pairs(1, 3);
        let cfg = TrainConfig {
            steps: 10,
            epochs: 500,
            batch_size: 1,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let mut model = DenoiserModel::new(tiny(10), 1).unwrap();
        let mut opt = OptimizerState::new(&model, cfg.adam(), 0.99);
        let r = train(&data, &cfg, &tbl, &mut model, &mut opt, |_| ControlFlow::Continue(())).unwrap();
        let avg = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        let early = avg(&r.losses[..10]);
        let late = avg(&r.losses[r.losses.len() - 50..]);
        assert!(late < 0.5 * early, "{early} -> {late}");
    }

    #[test]
    fn training_is_deterministic_and_observer_can_stop() {
        let tbl = toy();
        let data = pairs(5, 2);
        let cfg = TrainConfig {
            steps: 4,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = |stop_at: Option<u64>| {
            let mut model = DenoiserModel::new(tiny(4), 0).unwrap();
            let mut opt = OptimizerState::new(&model, cfg.adam(), 0.9);
            let r = train(&data, &cfg, &tbl, &mut model, &mut opt, |ev| match ev {
                TrainEvent::Step(rec) if Some(rec.step) == stop_at => ControlFlow::Break(()),
                _ => ControlFlow::Continue(()),
            })
            .unwrap();
            (r, model)
        };
        let (a, ma) = run(None);
        let (b, mb) = run(None);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.losses.len(), 9);
        let (c, _) = run(Some(4));
        assert!(c.stopped_early);
        assert_eq!(c.losses[..], a.losses[..4]);

        let mut buf = Vec::new();
        write_loss_csv(&a.losses[..2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,epoch,loss\n1,1,"));
    }

    #[test]
    fn sampler_checks_schedule_binding() {
        let tbl = toy();
        let data = pairs(2, 5);
        let xhat = batch(&[data[0].xhat().clone()]).unwrap();
        let mut model = DenoiserModel::new(tiny(4), 0).unwrap();
        let rng = StreamRng::new(0);
        assert!(matches!(
            sample(&xhat, &tbl, &model, &rng, SampleOptions::default()),
            Err(CdiffError::ScheduleMismatch { found: None, .. })
        ));
        let other = ScheduleTable::from_arrays(&[0.1, 0.2, 0.3, 0.45], &[0.25, 0.5, 0.75, 1.0]).unwrap();
        model.bind_schedule(other.fingerprint());
        assert!(sample(&xhat, &tbl, &model, &rng, SampleOptions::default()).is_err());
        model.bind_schedule(tbl.fingerprint());

        let det = SampleOptions {
            deterministic: true,
            ..SampleOptions::default()
        };
        let a = sample(&xhat, &tbl, &model, &rng, det).unwrap();
        let b = sample(&xhat, &tbl, &model, &StreamRng::new(99), det).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sample_is_per_image() {
        let tbl = toy();
        let data = pairs(2, 6);
        let mut model = DenoiserModel::new(tiny(4), 0).unwrap();
        model.bind_schedule(tbl.fingerprint());
        let batch = |ps: &[&SamplePair]| {
            let v: Vec<f64> = ps.iter().flat_map(|p| p.xhat().data().to_vec()).collect();
            Tensor::new(vec![ps.len(), 1, 8, 8], v).unwrap()
        };
        let rng = StreamRng::new(3);
        let both = sample(&batch(&[&data[0], &data[1]]), &tbl, &model, &rng, SampleOptions::default()).unwrap();
        let first = sample(&batch(&[&data[0]]), &tbl, &model, &rng, SampleOptions::default()).unwrap();
        assert_eq!(&both.data()[..64], first.data());
    }

    #[test]
    fn pair_validation() {
        let a = img(&[0.0, 1.0]);
        assert!(SamplePair::new(a.clone(), img(&[0.0]), PairMeta::default()).is_err());
        assert!(matches!(
            SamplePair::new(a.clone(), img(&[0.0, 1.5]), PairMeta::default()),
            Err(CdiffError::Range)
        ));
        assert!(SamplePair::new(a.clone(), a, PairMeta::default()).is_ok());
    }
}
