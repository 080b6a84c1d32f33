//! Procedural 32×32 corpus of rectangles, circles and crosses.

use super::{DataError, ImageSet, Source};
use crate::StreamRng;

const SIDE: usize = 32;

fn paint(img: &mut [u8], r: usize, c: usize, v: u8) {
    let p = &mut img[r * SIDE + c];
    *p = (*p).max(v);
}

fn draw(img: &mut [u8], rng: &mut StreamRng) {
    let v = rng.uniform_int(64, 255) as u8;
    match rng.uniform_int(0, 2) {
        0 => {
            let (h, w) = (rng.uniform_int(4, 16), rng.uniform_int(4, 16));
            let (r0, c0) = (rng.uniform_int(2, SIDE - 2 - h), rng.uniform_int(2, SIDE - 2 - w));
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    paint(img, r, c, v);
                }
            }
        }
        1 => {
            let rad = rng.uniform_int(3, 8) as f64;
            let lo = rad as usize + 2;
            let (cr, cc) = (rng.uniform_int(lo, SIDE - 1 - lo) as f64, rng.uniform_int(lo, SIDE - 1 - lo) as f64);
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                    if d <= rad {
                        paint(img, r, c, v);
                    }
                }
            }
        }
        _ => {
            let arm = rng.uniform_int(4, 10);
            let thick = rng.uniform_int(1, 3);
            let lo = arm + 1;
            let (cr, cc) = (rng.uniform_int(lo, SIDE - 1 - lo), rng.uniform_int(lo, SIDE - 1 - lo));
            for d in 0..=2 * arm {
                for k in 0..thick {
                    paint(img, cr - arm + d, cc + k - thick / 2, v);
                    paint(img, cr + k - thick / 2, cc - arm + d, v);
                }
            }
        }
    }
}

/// `n` images, each holding one to three shapes at random positions, sizes
/// and intensities. Image `i` depends only on `seed` and `i`.
pub fn synth_corpus(n: usize, seed: u64) -> Result<ImageSet, DataError> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    let base = StreamRng::new(seed).split_named("synth");
    let mut pixels = vec![0u8; n * SIDE * SIDE];
    for (i, img) in pixels.chunks_exact_mut(SIDE * SIDE).enumerate() {
        let mut rng = base.split(i as u64);
        for _ in 0..rng.uniform_int(1, 3) {
            draw(img, &mut rng);
        }
    }
    Ok(ImageSet {
        pixels,
        count: n,
        height: SIDE,
        width: SIDE,
        labels: None,
        source: Source::Synthetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synth_corpus(1000, 5).unwrap();
        assert_eq!(a, synth_corpus(1000, 5).unwrap());
        assert_ne!(a.pixels, synth_corpus(1000, 6).unwrap().pixels);
        let mut seen = [false; 256];
        for &p in &a.pixels {
            seen[p as usize] = true;
        }
        assert!(seen.iter().filter(|&&s| s).count() >= 8);
        assert!((0..a.count).all(|i| a.image(i).iter().any(|&p| p > 0)));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(synth_corpus(0, 1), Err(DataError::Empty)));
    }
}
