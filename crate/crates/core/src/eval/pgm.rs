//! Binary PGM (P5) images.

use std::io::Write;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn write_pgm<W: Write>(img: &Gray, mut out: W) -> Result<(), EvalError> {
    if img.pixels.len() != img.width * img.height {
        return Err(EvalError::Shape(format!(
            "{} pixels for {}x{}",
            img.pixels.len(),
            img.width,
            img.height
        )));
    }
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.pixels)?;
    Ok(())
}

/// Parses a P5 image with maxval 255. Comments are allowed in the header.
pub fn read_pgm(bytes: &[u8]) -> Result<Gray, EvalError> {
    let bad = |m: &str| EvalError::Pgm(m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if bytes.get(pos) == Some(&b'#') {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("header not terminated"));
    }
    pos += 1;
    let n = width.checked_mul(height).ok_or_else(|| bad("size overflow"))?;
    let pixels = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated pixel data"))?.to_vec();
    Ok(Gray { width, height, pixels })
}

/// Places equally sized panels side by side, separated by a one-pixel
/// white gutter.
pub fn triptych(panels: &[&[u8]], width: usize, height: usize) -> Gray {
    let n = panels.len();
    let w = n * width + n.saturating_sub(1);
    let mut pixels = vec![255u8; w * height];
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (width + 1);
        for r in 0..height {
            pixels[r * w + x0..r * w + x0 + width].copy_from_slice(&p[r * width..(r + 1) * width]);
        }
    }
    Gray { width: w, height, pixels }
}
