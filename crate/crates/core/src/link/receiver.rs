use num_complex::Complex64;

use super::{ChannelConfig, ConstellationSpec, LinkError, SignalBatch};

/// Gains with magnitude below this are treated as erasures.
pub const ERASURE_THRESHOLD: f64 = 1e-12;

/// Nearest-point hard decisions; ties resolve to the smaller Gray label.
pub fn demodulate_hard(y_eq: &SignalBatch, spec: &ConstellationSpec) -> Vec<u8> {
    let mut bits = Vec::with_capacity(y_eq.len() * spec.bits_per_symbol());
    for k in 0..y_eq.len() {
        spec.label_bits(spec.nearest(y_eq.get(k)), &mut bits);
    }
    bits
}

/// Zero-forcing equalisation with perfect CSI followed by hard demapping.
///
/// A symbol whose gain magnitude is below [`ERASURE_THRESHOLD`] is erased and
/// all of its bits are reported as 0.
pub fn naive_receive(
    y: &SignalBatch,
    h: &[Complex64],
    cfg: &ChannelConfig,
    spec: &ConstellationSpec,
) -> Result<Vec<u8>, LinkError> {
    if h.len() != y.len() {
        return Err(LinkError::InvalidSignal(format!(
            "{} gains for {} samples",
            h.len(),
            y.len()
        )));
    }
    let sp = cfg.power.sqrt();
    let mut bits = Vec::with_capacity(y.len() * spec.bits_per_symbol());
    for (k, hk) in h.iter().enumerate() {
        if hk.norm() < ERASURE_THRESHOLD {
            bits.extend(std::iter::repeat_n(0u8, spec.bits_per_symbol()));
            continue;
        }
        let eq = y.get(k) / (hk * sp);
        spec.label_bits(spec.nearest(eq), &mut bits);
    }
    Ok(bits)
}

/// Fraction of positions where `a` and `b` differ (over the shorter length).
pub fn bit_error_rate(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / n as f64
}
