use super::LinkError;

fn check(r: usize) -> Result<(), LinkError> {
    if r == 0 || r % 2 == 0 {
        return Err(LinkError::InvalidRepetition(r));
    }
    Ok(())
}

/// Repeats every bit `r` times. `r` must be odd.
pub fn repetition_encode(bits: &[u8], r: usize) -> Result<Vec<u8>, LinkError> {
    check(r)?;
    Ok(bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(b, r))
        .collect())
}

/// Majority vote over consecutive groups of `r`; a trailing partial group is
/// dropped.
pub fn repetition_decode(bits: &[u8], r: usize) -> Result<Vec<u8>, LinkError> {
    check(r)?;
    Ok(bits
        .chunks_exact(r)
        .map(|g| (g.iter().map(|&b| b as usize).sum::<usize>() * 2 > r) as u8)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::StreamRng;

    #[test]
    fn identity_at_one() {
        let b = vec![1, 0, 0, 1, 1];
        assert_eq!(repetition_encode(&b, 1).unwrap(), b);
        assert_eq!(repetition_decode(&b, 1).unwrap(), b);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            repetition_encode(&[1, 0, 1], 3).unwrap(),
            vec![1, 1, 1, 0, 0, 0, 1, 1, 1]
        );
        assert_eq!(
            repetition_decode(&[1, 1, 0, 0, 0, 0, 1, 0, 1], 3).unwrap(),
            vec![1, 0, 1]
        );
    }

    #[test]
    fn even_factor_rejected() {
        assert_eq!(repetition_encode(&[1], 2), Err(LinkError::InvalidRepetition(2)));
        assert_eq!(repetition_decode(&[1], 0), Err(LinkError::InvalidRepetition(0)));
    }

    #[test]
    fn bsc_residual_error_matches_binomial() {
        // P(≥3 of 5 flipped) at p = 0.2
        let p: f64 = 0.2;
        let binom = |n: u64, k: u64| -> f64 {
            (1..=k).map(|i| (n - k + i) as f64 / i as f64).product()
        };
        let oracle: f64 = (3..=5)
            .map(|k| binom(5, k) * p.powi(k as i32) * (1.0 - p).powi(5 - k as i32))
            .sum();
        assert!((oracle - 0.05792).abs() < 1e-5);

        let mut rng = StreamRng::new(21);
        let n = 100_000;
        let data: Vec<u8> = (0..n).map(|_| rng.bit()).collect();
        let mut tx = repetition_encode(&data, 5).unwrap();
        for b in tx.iter_mut() {
            if rng.uniform(0.0, 1.0) < p {
                *b ^= 1;
            }
        }
        let rx = repetition_decode(&tx, 5).unwrap();
        let ber = data.iter().zip(&rx).filter(|(a, b)| a != b).count() as f64 / n as f64;
        assert!((ber - oracle).abs() < 0.005, "{ber} vs {oracle}");
    }
}
