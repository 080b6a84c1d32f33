//! Image sets, the link pairing pipeline and the pair container.

mod idx;
mod pairs;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use pairs::{build_pairs, load_pairs, save_pairs, PairConfig, PairDataset};
pub use synth::synth_corpus;

use thiserror::Error;

use crate::cdiff::CdiffError;
use crate::codec::ContainerError;
use crate::link::LinkError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic {found:#010x} at byte 0 (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("not an IDX file: found {found:?} container magic")]
    WrongContainer { found: String },
    #[error("truncated IDX file: data ends at byte {offset}, {expected} bytes declared")]
    Truncated { offset: usize, expected: usize },
    #[error("IDX dimensions at byte {offset} overflow the addressable size")]
    DimOverflow { offset: usize },
    #[error("{labels} labels for {images} images")]
    LabelMismatch { images: usize, labels: usize },
    #[error("{extra} trailing bytes after IDX payload at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("unsupported image size {height}x{width} (expected 28x28 or 32x32)")]
    UnsupportedSize { height: usize, width: usize },
    #[error("image set must hold at least one image")]
    Empty,
    #[error("invalid pair configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Pair(#[from] CdiffError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Mnist,
    Synthetic,
}

/// `N` grayscale `H × W` images, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub pixels: Vec<u8>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Option<Vec<u8>>,
    pub source: Source,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` images.
    pub fn take(&self, n: usize) -> ImageSet {
        let n = n.min(self.count);
        ImageSet {
            pixels: self.pixels[..n * self.height * self.width].to_vec(),
            count: n,
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            ..*self
        }
    }

    /// Images `n..`.
    pub fn skip(&self, n: usize) -> ImageSet {
        let n = n.min(self.count);
        ImageSet {
            pixels: self.pixels[n * self.height * self.width..].to_vec(),
            count: self.count - n,
            labels: self.labels.as_ref().map(|l| l[n..].to_vec()),
            ..*self
        }
    }
}

/// Zero-pads 28×28 images to 32×32; 32×32 sets pass through.
pub fn prepare(set: &ImageSet) -> Result<ImageSet, DataError> {
    if set.is_empty() {
        return Err(DataError::Empty);
    }
    match (set.height, set.width) {
        (32, 32) => Ok(set.clone()),
        (28, 28) => {
            let mut pixels = vec![0u8; set.count * 32 * 32];
            for i in 0..set.count {
                let src = set.image(i);
                let dst = &mut pixels[i * 1024..(i + 1) * 1024];
                for r in 0..28 {
                    dst[(r + 2) * 32 + 2..(r + 2) * 32 + 30].copy_from_slice(&src[r * 28..(r + 1) * 28]);
                }
            }
            Ok(ImageSet {
                pixels,
                height: 32,
                width: 32,
                ..set.clone()
            })
        }
        (height, width) => Err(DataError::UnsupportedSize { height, width }),
    }
}

/// `[0, 255] → [-1, 1]`.
pub fn pixel_to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Inverse of [`pixel_to_unit`], rounding and clamping.
pub fn unit_to_pixel(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(h: usize, w: usize, pixels: Vec<u8>) -> ImageSet {
        ImageSet {
            count: pixels.len() / (h * w),
            pixels,
            height: h,
            width: w,
            labels: None,
            source: Source::Mnist,
        }
    }

    #[test]
    fn pad_offsets() {
        let zeros = prepare(&set(28, 28, vec![0; 784])).unwrap();
        assert!(zeros.pixels.iter().all(|&p| p == 0) && zeros.pixels.len() == 1024);
        let mut one = vec![0; 784];
        one[0] = 200;
        let p = prepare(&set(28, 28, one)).unwrap();
        assert_eq!(p.pixels[2 * 32 + 2], 200);
        assert_eq!(p.pixels.iter().map(|&v| v as u32).sum::<u32>(), 200);
    }

    #[test]
    fn interior_preserved() {
        let src: Vec<u8> = (0..2 * 784).map(|i| (i * 7 % 251) as u8).collect();
        let p = prepare(&set(28, 28, src.clone())).unwrap();
        for i in 0..2 {
            let img = p.image(i);
            let inner: Vec<u8> = (0..28).flat_map(|r| img[(r + 2) * 32 + 2..(r + 2) * 32 + 30].to_vec()).collect();
            assert_eq!(inner, src[i * 784..(i + 1) * 784]);
        }
    }

    #[test]
    fn sizes() {
        assert!(prepare(&set(32, 32, vec![1; 1024])).is_ok());
        assert!(matches!(
            prepare(&set(30, 30, vec![1; 900])),
            Err(DataError::UnsupportedSize { height: 30, width: 30 })
        ));
    }

    #[test]
    fn unit_map_roundtrip() {
        for p in 0..=255u8 {
            let v = pixel_to_unit(p);
            assert!((-1.0..=1.0).contains(&v));
            assert_eq!(unit_to_pixel(v), p);
        }
    }
}
