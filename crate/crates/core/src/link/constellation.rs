use num_complex::Complex64;

use super::{LinkError, SignalBatch};

pub fn gray_encode(v: usize) -> usize {
    v ^ (v >> 1)
}

pub fn gray_decode(mut g: usize) -> usize {
    let mut v = g;
    while g > 1 {
        g >>= 1;
        v ^= g;
    }
    v
}

/// Square Gray-mapped QAM with unit average symbol energy.
///
/// The label of a point is `(i_gray << half) | q_gray`, where the first half of
/// each bit group selects the in-phase level and the second half the
/// quadrature level. `points[label]` is the point carrying `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSpec {
    order: usize,
    bits_per_symbol: usize,
    scale: f64,
    points: Vec<Complex64>,
}

impl ConstellationSpec {
    pub fn new(order: usize) -> Result<Self, LinkError> {
        let bits_per_symbol = match order {
            4 => 2,
            16 => 4,
            64 => 6,
            other => return Err(LinkError::UnsupportedOrder(other)),
        };
        let half = bits_per_symbol / 2;
        let levels = 1usize << half;
        // average of a^2 + b^2 over the odd-integer grid is 2(M-1)/3
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let amp = |gray: usize| (2.0 * gray_decode(gray) as f64 - (levels as f64 - 1.0)) * scale;
        let points = (0..order)
            .map(|label| Complex64::new(amp(label >> half), amp(label & (levels - 1))))
            .collect();
        Ok(Self {
            order,
            bits_per_symbol,
            scale,
            points,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Factor mapping the odd-integer grid to unit average energy.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    pub fn modulate(&self, bits: &[u8]) -> Result<SignalBatch, LinkError> {
        let k = self.bits_per_symbol;
        if bits.len() % k != 0 {
            return Err(LinkError::Framing {
                len: bits.len(),
                bits_per_symbol: k,
            });
        }
        let symbols: Vec<Complex64> = bits
            .chunks_exact(k)
            .map(|g| self.points[label_of(g)])
            .collect();
        Ok(SignalBatch::from_complex(&symbols))
    }

    /// Index of the nearest point; ties go to the smaller label.
    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (label, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = label;
            }
        }
        best
    }

    pub fn label_bits(&self, label: usize, out: &mut Vec<u8>) {
        for j in (0..self.bits_per_symbol).rev() {
            out.push(((label >> j) & 1) as u8);
        }
    }
}

pub(super) fn label_of(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::StreamRng;

    #[test]
    fn qpsk_points() {
        let c = ConstellationSpec::new(4).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(c.point(0b00), Complex64::new(-s, -s));
        assert_eq!(c.point(0b01), Complex64::new(-s, s));
        assert_eq!(c.point(0b10), Complex64::new(s, -s));
        assert_eq!(c.point(0b11), Complex64::new(s, s));
    }

    #[test]
    fn qam64_scale_is_inverse_sqrt_42() {
        let c = ConstellationSpec::new(64).unwrap();
        assert!((c.scale() - 1.0 / 42f64.sqrt()).abs() < 1e-15);
        // oracle: brute-force mean of a^2+b^2 on {±1,±3,±5,±7}^2
        let lv = [-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0];
        let mean: f64 = lv
            .iter()
            .flat_map(|a| lv.iter().map(move |b| a * a + b * b))
            .sum::<f64>()
            / 64.0;
        assert_eq!(mean, 42.0);
    }

    #[test]
    fn unit_energy_and_gray_neighbours() {
        for m in [4, 16, 64] {
            let c = ConstellationSpec::new(m).unwrap();
            let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
            assert!((e - 1.0).abs() < 1e-12, "order {m}: {e}");
            let step = 2.0 * c.scale();
            for (a, pa) in c.points().iter().enumerate() {
                for (b, pb) in c.points().iter().enumerate() {
                    let d = pa - pb;
                    let adjacent = ((d.re.abs() - step).abs() < 1e-9 && d.im.abs() < 1e-9)
                        || ((d.im.abs() - step).abs() < 1e-9 && d.re.abs() < 1e-9);
                    if adjacent {
                        assert_eq!((a ^ b).count_ones(), 1, "order {m}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert_eq!(
            ConstellationSpec::new(8).unwrap_err(),
            LinkError::UnsupportedOrder(8)
        );
    }

    #[test]
    fn modulate_lookup_and_framing() {
        let c = ConstellationSpec::new(4).unwrap();
        let b = c.modulate(&[0, 0]).unwrap();
        assert_eq!(b.get(0), c.point(0));
        assert!(c.modulate(&[]).unwrap().is_empty());
        assert!(matches!(
            c.modulate(&[1, 0, 1]),
            Err(LinkError::Framing { len: 3, bits_per_symbol: 2 })
        ));
    }

    #[test]
    fn qam64_sample_energy() {
        let c = ConstellationSpec::new(64).unwrap();
        let mut rng = StreamRng::new(11);
        let k = 100_000;
        let bits: Vec<u8> = (0..6 * k).map(|_| rng.bit()).collect();
        let s = c.modulate(&bits).unwrap();
        let e: f64 = s.to_complex().iter().map(|p| p.norm_sqr()).sum::<f64>() / k as f64;
        assert!((e - 1.0).abs() < 0.02, "{e}");
    }

    #[test]
    fn gray_roundtrip() {
        for v in 0..256 {
            assert_eq!(gray_decode(gray_encode(v)), v);
        }
    }
}
