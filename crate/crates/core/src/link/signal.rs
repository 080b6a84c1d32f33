use num_complex::Complex64;

use super::LinkError;

/// A batch of `K` complex baseband samples stored as `2K` reals: all real
/// parts first, then all imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    data: Vec<f64>,
}

impl SignalBatch {
    pub fn new(data: Vec<f64>) -> Result<Self, LinkError> {
        if data.len() % 2 != 0 {
            return Err(LinkError::InvalidSignal(format!(
                "odd length {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinkError::InvalidSignal(format!("non-finite entry at {i}")));
        }
        Ok(Self { data })
    }

    pub fn empty() -> Self {
        Self { data: Vec::new() }
    }

    pub fn from_complex(samples: &[Complex64]) -> Self {
        let k = samples.len();
        let mut data = vec![0.0; 2 * k];
        for (i, s) in samples.iter().enumerate() {
            data[i] = s.re;
            data[k + i] = s.im;
        }
        Self { data }
    }

    /// Number of complex samples `K`.
    pub fn len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, k: usize) -> Complex64 {
        let n = self.len();
        Complex64::new(self.data[k], self.data[n + k])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        (0..self.len()).map(|k| self.get(k)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_real_then_imag() {
        let b = SignalBatch::from_complex(&[Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert_eq!(b.as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(b.get(1), Complex64::new(3.0, 4.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SignalBatch::new(vec![1.0]).is_err());
        assert!(SignalBatch::new(vec![1.0, f64::NAN]).is_err());
        assert!(SignalBatch::new(vec![]).unwrap().is_empty());
    }
}
