//! Big-endian IDX files (the MNIST container format).

use std::path::{Path, PathBuf};
use thiserror::Error;

use super::{Dataset, Labels, Split};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic at offset {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { offset: usize, expected: u32, found: u32 },
    #[error("truncated IDX data: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX dimensions overflow the addressable size")]
    DimensionOverflow,
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    let chunk = bytes.get(offset..end).ok_or(IdxError::Truncated {
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
}

/// Returns the dimensions and the payload slice of an IDX u8 tensor.
fn parse(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8]), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(IdxError::BadMagic { offset: 0, expected: magic, found });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::DimensionOverflow)?;
    let header = 4 + 4 * rank;
    let expected = header.checked_add(count).ok_or(IdxError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { expected, found: bytes.len() });
    }
    Ok((dims, &bytes[header..expected]))
}

/// Parses a 3-D image tensor into `(n, rows * cols, pixels in [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), IdxError> {
    let (dims, data) = parse(bytes, IDX_IMAGES_MAGIC)?;
    let pixels = data.iter().map(|&p| p as f64 / 255.0).collect();
    Ok((dims[0], dims[1] * dims[2], pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let (_, data) = parse(bytes, IDX_LABELS_MAGIC)?;
    Ok(data.iter().map(|&l| l as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an image file and its label file into a training dataset.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, IdxError> {
    let (n, dim, pixels) = parse_idx_images(&read(images)?)?;
    let classes = parse_idx_labels(&read(labels)?)?;
    if classes.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: classes.len(),
        });
    }
    Ok(Dataset {
        inputs: pixels,
        dim,
        labels: Labels::Classes(classes),
        split: Split::Train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            b.extend(d.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, (n * rows * cols) as usize));
        b
    }

    #[test]
    fn parses_images_and_scales() {
        let (n, d, px) = parse_idx_images(&images(2, 3, 4, 255)).unwrap();
        assert_eq!((n, d), (2, 12));
        assert!(px.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn wrong_magic_names_offset() {
        let mut b = images(1, 2, 2, 0);
        b[3] = 0x01;
        let err = parse_idx_images(&b).unwrap_err();
        assert!(matches!(err, IdxError::BadMagic { offset: 0, found: 0x801, .. }));
        assert!(err.to_string().contains("offset 0"));
    }

    #[test]
    fn truncated_payload() {
        let mut b = images(2, 2, 2, 7);
        b.pop();
        assert!(matches!(
            parse_idx_images(&b),
            Err(IdxError::Truncated { expected: 24, found: 23 })
        ));
        assert!(matches!(parse_idx_labels(&[0, 0]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn overflowing_dimensions() {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for _ in 0..3 {
            b.extend(u32::MAX.to_be_bytes());
        }
        if usize::BITS == 64 {
            // 2^96 does not fit a usize
            assert!(matches!(parse_idx_images(&b), Err(IdxError::DimensionOverflow)));
        }
    }
}
