//! Variance and conditioning schedules.
//!
//! All per-step arrays are indexed by the diffusion step `t` in `0..=T`; index
//! 0 holds the boundary values `ᾱ₀ = 1`, `λ₀ = 0`, `δ₀ = 0` used by the last
//! reverse step. Quantities only defined for `t ≥ 1` store 0 at index 0.
//!
//! With interpolation weight `λ_t` between the clean and the degraded signal,
//! the conditional forward marginal is
//! `x_t ~ N((1-λ_t)√ᾱ_t x₀ + λ_t√ᾱ_t x̂, δ_t I)` with
//! `δ_t = (1-ᾱ_t) - λ_t² ᾱ_t`, and the reverse mean is
//! `ψ_x x_t + ψ_x̂ x̂ - ψ_ε ε_θ`.

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("schedule infeasible at t = {t}: {quantity} = {value:e}")]
    Infeasible {
        t: usize,
        quantity: &'static str,
        value: f64,
    },
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaShape {
    /// `λ_t = t / T`.
    #[default]
    Linear,
    /// `λ_t = 0` for every step: the unconditional diffusion, used for
    /// diagnostics.
    Zero,
}

/// Coefficients of the conditional reverse mean at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoeffs {
    pub x: f64,
    pub xhat: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    lambda: Vec<f64>,
    delta: Vec<f64>,
    delta_cond: Vec<f64>,
    psi_x: Vec<f64>,
    psi_xhat: Vec<f64>,
    psi_eps: Vec<f64>,
}

impl ScheduleTable {
    /// Linear β from `beta_start` (at `t = 1`) to `beta_end` (at `t = T`).
    pub fn build(
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        lambda_shape: LambdaShape,
    ) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::InvalidParameter(format!(
                "need at least 2 steps, got {steps}"
            )));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(ScheduleError::InvalidParameter(format!(
                "need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let lambdas: Vec<f64> = (1..=steps)
            .map(|t| match lambda_shape {
                LambdaShape::Linear => t as f64 / steps as f64,
                LambdaShape::Zero => 0.0,
            })
            .collect();
        Self::from_arrays(&betas, &lambdas)
    }

    /// Builds a table from explicit `β_1..β_T` and `λ_1..λ_T`.
    pub fn from_arrays(betas: &[f64], lambdas: &[f64]) -> Result<Self, ScheduleError> {
        let steps = betas.len();
        if steps < 2 {
            return Err(ScheduleError::InvalidParameter(format!(
                "need at least 2 steps, got {steps}"
            )));
        }
        if lambdas.len() != steps {
            return Err(ScheduleError::InvalidParameter(format!(
                "{} lambdas for {steps} betas",
                lambdas.len()
            )));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "beta[{}] = {b} outside (0, 1)",
                    i + 1
                )));
            }
            if i > 0 && b <= betas[i - 1] {
                return Err(ScheduleError::InvalidParameter(format!(
                    "beta must be strictly increasing (t = {})",
                    i + 1
                )));
            }
        }
        let mut prev = 0.0;
        for (i, &l) in lambdas.iter().enumerate() {
            if !(0.0..=1.0).contains(&l) || l < prev {
                return Err(ScheduleError::InvalidParameter(format!(
                    "lambda must be non-decreasing in [0, 1] (t = {})",
                    i + 1
                )));
            }
            if l == 1.0 && i + 1 < steps {
                return Err(ScheduleError::InvalidParameter(format!(
                    "lambda reaches 1 before the final step (t = {})",
                    i + 1
                )));
            }
            prev = l;
        }

        let n = steps + 1;
        let mut beta = vec![0.0; n];
        let mut alpha = vec![1.0; n];
        let mut alpha_bar = vec![1.0; n];
        let mut lambda = vec![0.0; n];
        beta[1..].copy_from_slice(betas);
        lambda[1..].copy_from_slice(lambdas);
        for t in 1..n {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }

        let mut delta = vec![0.0; n];
        for t in 1..n {
            delta[t] = (1.0 - alpha_bar[t]) - lambda[t] * lambda[t] * alpha_bar[t];
            if delta[t] <= 0.0 {
                return Err(ScheduleError::Infeasible {
                    t,
                    quantity: "delta",
                    value: delta[t],
                });
            }
        }

        let mut delta_cond = vec![0.0; n];
        let mut psi_x = vec![0.0; n];
        let mut psi_xhat = vec![0.0; n];
        let mut psi_eps = vec![0.0; n];
        for t in 1..n {
            let keep = (1.0 - lambda[t]) / (1.0 - lambda[t - 1]);
            delta_cond[t] = delta[t] - keep * keep * alpha[t] * delta[t - 1];
            if delta_cond[t] < 0.0 {
                return Err(ScheduleError::Infeasible {
                    t,
                    quantity: "delta_cond",
                    value: delta_cond[t],
                });
            }
            let sa = alpha[t].sqrt();
            let (d, dp) = (delta[t], delta[t - 1]);
            psi_x[t] = dp * keep * sa / d + (1.0 - lambda[t - 1]) * delta_cond[t] / (d * sa);
            psi_xhat[t] = (lambda[t - 1] * d - lambda[t] * keep * alpha[t] * dp)
                * alpha_bar[t - 1].sqrt()
                / d;
            psi_eps[t] = (1.0 - lambda[t - 1]) * delta_cond[t] * (1.0 - alpha_bar[t]).sqrt() / (d * sa);
        }

        Ok(Self {
            steps,
            beta,
            alpha,
            alpha_bar,
            lambda,
            delta,
            delta_cond,
            psi_x,
            psi_xhat,
            psi_eps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    /// `δ_{t|t-1} = δ_t - ((1-λ_t)/(1-λ_{t-1}))² α_t δ_{t-1}`.
    pub fn delta_cond(&self, t: usize) -> f64 {
        self.delta_cond[t]
    }

    /// `β_1..β_T`.
    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    /// `λ_1..λ_T`.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambda[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    fn check(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps {
            return Err(ScheduleError::StepOutOfRange {
                t,
                steps: self.steps,
            });
        }
        Ok(())
    }

    pub fn reverse_coeffs(&self, t: usize) -> Result<ReverseCoeffs, ScheduleError> {
        self.check(t)?;
        Ok(ReverseCoeffs {
            x: self.psi_x[t],
            xhat: self.psi_xhat[t],
            eps: self.psi_eps[t],
        })
    }

    /// Mean coefficients of the unconditional reverse step,
    /// `(1/√α_t, (1-α_t)/(√α_t √(1-ᾱ_t)))`.
    pub fn vanilla_posterior_coeffs(&self, t: usize) -> Result<(f64, f64), ScheduleError> {
        self.check(t)?;
        let a = self.alpha[t];
        Ok((1.0 / a.sqrt(), (1.0 - a) / (a.sqrt() * (1.0 - self.alpha_bar[t]).sqrt())))
    }

    /// `(1-ᾱ_t)/ᾱ_t`.
    pub fn diffusion_snr(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check(t)?;
        let ab = self.alpha_bar[t];
        Ok((1.0 - ab) / ab)
    }

    /// Variance of the Gaussian bridge between consecutive conditional
    /// marginals, `δ_{t|t-1} δ_{t-1} / δ_t`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.delta_cond[t] * self.delta[t - 1] / self.delta[t]
    }

    /// Stable 64-bit digest of the defining arrays.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.steps as u64).to_le_bytes());
        for v in self.betas().iter().chain(self.lambdas()) {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ScheduleTable {
        ScheduleTable::from_arrays(&[0.1, 0.2, 0.3, 0.4], &[0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    fn production() -> ScheduleTable {
        ScheduleTable::build(200, 1e-4, 0.0095, LambdaShape::Linear).unwrap()
    }

    #[test]
    fn toy_deltas() {
        let s = toy();
        let expect = [0.0, 0.04375, 0.1, 0.2125, 0.3952];
        let ab = [1.0, 0.9, 0.72, 0.504, 0.3024];
        for t in 0..=4 {
            assert!((s.delta(t) - expect[t]).abs() < 1e-12, "t={t}");
            assert!((s.alpha_bar(t) - ab[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_vanilla_coeffs_and_snr() {
        let s = toy();
        let (a, b) = s.vanilla_posterior_coeffs(1).unwrap();
        assert!((a - 1.054093).abs() < 1e-6);
        assert!((b - 0.333333).abs() < 1e-6);
        assert!((s.diffusion_snr(4).unwrap() - 2.30688).abs() < 1e-5);
        assert!(s.diffusion_snr(0).is_err());
        assert!(s.vanilla_posterior_coeffs(5).is_err());
    }

    #[test]
    fn vanilla_coeffs_with_unit_alpha() {
        // α_t = 1 is outside the valid schedule domain, evaluate the formula directly
        let a: f64 = 1.0;
        assert_eq!(1.0 / a.sqrt(), 1.0);
        assert_eq!((1.0 - a) / (a.sqrt() * 0.5f64.sqrt()), 0.0);
    }

    #[test]
    fn zero_lambda_reduces_to_vanilla() {
        for s in [
            ScheduleTable::build(200, 1e-4, 0.0095, LambdaShape::Zero).unwrap(),
            ScheduleTable::from_arrays(&[0.1, 0.2, 0.3, 0.4], &[0.0; 4]).unwrap(),
        ] {
            for t in 1..=s.steps() {
                assert!((s.delta(t) - (1.0 - s.alpha_bar(t))).abs() < 1e-12);
                assert!((s.delta_cond(t) - s.beta(t)).abs() < 1e-12);
                let c = s.reverse_coeffs(t).unwrap();
                let (vx, ve) = s.vanilla_posterior_coeffs(t).unwrap();
                assert!((c.x - vx).abs() < 1e-12, "t={t}");
                assert_eq!(c.xhat, 0.0);
                assert!((c.eps - ve).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn production_invariants() {
        let s = production();
        assert_eq!(s.lambda(0), 0.0);
        assert_eq!(s.lambda(200), 1.0);
        assert!((s.delta(200) - (1.0 - 2.0 * s.alpha_bar(200))).abs() < 1e-15);
        assert!(s.delta(200) > 0.0);
        for t in 1..=200 {
            assert!(s.beta(t) > s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.lambda(t) >= s.lambda(t - 1));
            assert!(s.delta(t) > 0.0);
            assert!(s.delta_cond(t) >= 0.0);
            // standardized-input marginal variance
            let v = (1.0 - s.lambda(t)).powi(2) * s.alpha_bar(t) + s.delta(t);
            assert!(v <= 1.0 + 1e-15);
            if t > 1 {
                assert!(s.diffusion_snr(t).unwrap() > s.diffusion_snr(t - 1).unwrap());
            }
        }
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(200) - 0.0095).abs() < 1e-15);
    }

    #[test]
    fn last_step_coeffs() {
        let s = production();
        let t = 200;
        let c = s.reverse_coeffs(t).unwrap();
        let l = s.lambda(t - 1);
        assert!((c.x - (1.0 - l) / s.alpha(t).sqrt()).abs() < 1e-12);
        assert!((c.xhat - l * s.alpha_bar(t - 1).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_schedules_rejected() {
        // β too small for the conditioning ramp: δ_2 < 0
        let err = ScheduleTable::build(50, 4e-4, 0.038, LambdaShape::Linear).unwrap_err();
        assert!(matches!(err, ScheduleError::Infeasible { quantity: "delta", .. }), "{err:?}");
        assert!(ScheduleTable::build(1, 1e-4, 0.01, LambdaShape::Linear).is_err());
        assert!(ScheduleTable::build(10, 0.02, 0.01, LambdaShape::Linear).is_err());
        assert!(ScheduleTable::from_arrays(&[0.1, 0.1], &[0.5, 1.0]).is_err());
        assert!(ScheduleTable::from_arrays(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn desk_schedule_is_feasible() {
        let s = ScheduleTable::build(50, 1e-3, 0.04, LambdaShape::Linear).unwrap();
        assert!(s.alpha_bar(50) < 0.5);
    }

    #[test]
    fn fingerprint_discriminates() {
        let a = production();
        assert_eq!(a.fingerprint(), production().fingerprint());
        let b = ScheduleTable::build(200, 1e-3, 0.0095, LambdaShape::Linear).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
