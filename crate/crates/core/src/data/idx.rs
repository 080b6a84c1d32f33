//! IDX reader for the MNIST distribution files.

use std::path::Path;

use super::{DataError, ImageSet, Source};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const FOREIGN: [(&[u8], &str); 3] = [(b"CDIF", "CDIF"), (b"CDPR", "CDPR"), (&[0x1f, 0x8b], "gzip")];

fn be32(b: &[u8], at: usize) -> Result<u32, DataError> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated {
            offset: b.len(),
            expected: at + 4,
        })
}

/// Returns the dimensions and the payload.
fn parse(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8]), DataError> {
    if let Some((_, name)) = FOREIGN.iter().find(|(m, _)| bytes.starts_with(m)) {
        return Err(DataError::WrongContainer {
            found: (*name).to_string(),
        });
    }
    let found = be32(bytes, 0)?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found });
    }
    let nd = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(nd);
    let mut total = 1usize;
    for k in 0..nd {
        let d = be32(bytes, 4 + 4 * k)? as usize;
        total = total.checked_mul(d).ok_or(DataError::DimOverflow { offset: 4 + 4 * k })?;
        dims.push(d);
    }
    let start = 4 + 4 * nd;
    let end = start
        .checked_add(total)
        .filter(|&e| e <= isize::MAX as usize)
        .ok_or(DataError::DimOverflow { offset: start })?;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            expected: end,
        });
    }
    if bytes.len() > end {
        return Err(DataError::TrailingBytes {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    Ok((dims, &bytes[start..end]))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet, DataError> {
    let (dims, data) = parse(bytes, IMAGES_MAGIC)?;
    if dims[0] == 0 {
        return Err(DataError::Empty);
    }
    Ok(ImageSet {
        pixels: data.to_vec(),
        count: dims[0],
        height: dims[1],
        width: dims[2],
        labels: None,
        source: Source::Mnist,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    Ok(parse(bytes, LABELS_MAGIC)?.1.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<ImageSet, DataError> {
    let mut set = parse_idx_images(&read(images)?)?;
    if let Some(path) = labels {
        let l = parse_idx_labels(&read(path)?)?;
        if l.len() != set.count {
            return Err(DataError::LabelMismatch {
                images: set.count,
                labels: l.len(),
            });
        }
        set.labels = Some(l);
    }
    Ok(set)
}
