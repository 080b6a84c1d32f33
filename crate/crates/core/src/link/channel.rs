use num_complex::Complex64;

use super::{LinkError, SignalBatch};
use crate::StreamRng;

/// Upper end of the typical impairment range (0.15²).
pub const TYPICAL_IMPAIRMENT_MAX: f64 = 0.0225;

/// Hard limit on an impairment level: distortion power cannot exceed the
/// signal power it is derived from.
pub const MAX_IMPAIRMENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    Rayleigh,
    AwgnOnly,
}

/// Transceiver and propagation parameters for one link realisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub power: f64,
    pub noise_var: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub fading: Fading,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            power: 1.0,
            noise_var: 1.0,
            kappa_t: 0.0,
            kappa_r: 0.0,
            fading: Fading::Rayleigh,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::InvalidChannel(m));
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power must be positive, got {}", self.power));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return bad(format!("noise variance must be positive, got {}", self.noise_var));
        }
        for (name, k) in [("kappa_t", self.kappa_t), ("kappa_r", self.kappa_r)] {
            if !(0.0..=MAX_IMPAIRMENT).contains(&k) {
                return bad(format!("{name} = {k} outside [0, {MAX_IMPAIRMENT}]"));
            }
        }
        Ok(())
    }

    /// Default random stream for this configuration.
    pub fn stream(&self) -> StreamRng {
        StreamRng::new(self.seed)
    }
}

/// Variance of the effective noise-plus-distortion given the gain `h`:
/// `P (κᵗ + κʳ) |h|² + σ²`.
pub fn effective_noise_var(h: Complex64, cfg: &ChannelConfig) -> f64 {
    cfg.power * (cfg.kappa_t + cfg.kappa_r) * h.norm_sqr() + cfg.noise_var
}

/// Passes `s` through the impaired channel, drawing the fading gains.
///
/// Returns the received batch and the realised gains, which the receiver is
/// assumed to know perfectly.
pub fn transmit(
    s: &SignalBatch,
    cfg: &ChannelConfig,
    rng: &mut StreamRng,
) -> Result<(SignalBatch, Vec<Complex64>), LinkError> {
    cfg.validate()?;
    let h: Vec<Complex64> = (0..s.len())
        .map(|_| match cfg.fading {
            Fading::Rayleigh => rng.complex_normal(1.0),
            Fading::AwgnOnly => Complex64::new(1.0, 0.0),
        })
        .collect();
    let y = transmit_with_gains(s, &h, cfg, rng)?;
    Ok((y, h))
}

/// Same as [`transmit`] with caller-supplied gains.
///
/// Per sample: `y = h (√P s + τᵗ) + τʳ + n` with `τᵗ ~ CN(0, κᵗP)`,
/// `τʳ ~ CN(0, κʳP|h|²)`, `n ~ CN(0, σ²)`, drawn in that order.
pub fn transmit_with_gains(
    s: &SignalBatch,
    h: &[Complex64],
    cfg: &ChannelConfig,
    rng: &mut StreamRng,
) -> Result<SignalBatch, LinkError> {
    cfg.validate()?;
    if h.len() != s.len() {
        return Err(LinkError::InvalidSignal(format!(
            "{} gains for {} samples",
            h.len(),
            s.len()
        )));
    }
    let sqrt_p = cfg.power.sqrt();
    let y: Vec<Complex64> = h
        .iter()
        .enumerate()
        .map(|(k, &hk)| {
            let tau_t = rng.complex_normal(cfg.kappa_t * cfg.power);
            let tau_r = rng.complex_normal(cfg.kappa_r * cfg.power * hk.norm_sqr());
            let n = rng.complex_normal(cfg.noise_var);
            hk * (sqrt_p * s.get(k) + tau_t) + tau_r + n
        })
        .collect();
    Ok(SignalBatch::from_complex(&y))
}

/// Dense real-valued channel matrix `[[Re H, -Im H], [Im H, Re H]]` with
/// `H = diag(h)`, row-major `2K × 2K`. Intended for small `K`.
pub fn stacked_channel_matrix(h: &[Complex64]) -> Vec<f64> {
    let k = h.len();
    let n = 2 * k;
    let mut m = vec![0.0; n * n];
    for (i, hi) in h.iter().enumerate() {
        m[i * n + i] = hi.re;
        m[i * n + k + i] = -hi.im;
        m[(k + i) * n + i] = hi.im;
        m[(k + i) * n + k + i] = hi.re;
    }
    m
}

/// Received batch in the stacked real form `ỹ = H̃ s̃ + ν`, where
/// `s̃ = √P [Re s; Im s]` and `nu` is the stacked effective noise.
pub fn stacked_receive(h: &[Complex64], s: &SignalBatch, power: f64, nu: &SignalBatch) -> SignalBatch {
    let k = h.len();
    let st = s.as_slice();
    let nv = nu.as_slice();
    let sp = power.sqrt();
    let mut y = vec![0.0; 2 * k];
    for i in 0..k {
        let (re, im) = (sp * st[i], sp * st[k + i]);
        y[i] = h[i].re * re - h[i].im * im + nv[i];
        y[k + i] = h[i].im * re + h[i].re * im + nv[k + i];
    }
    SignalBatch::from_complex(
        &(0..k)
            .map(|i| Complex64::new(y[i], y[k + i]))
            .collect::<Vec<_>>(),
    )
}
