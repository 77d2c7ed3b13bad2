//! IDX binary format (MNIST / Fashion-MNIST).
//!
//! Only unsigned-byte tensors are accepted: magic `0x00000801` (labels, one
//! dimension) and `0x00000803` (images, three dimensions). All integers are
//! big-endian.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::{gz_path, DataError};
use crate::nn::{Dataset, Targets};
use crate::{Error, Real, Result};

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    /// Number of payload bytes implied by the dimensions.
    pub fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub header: IdxHeader,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn dims(&self) -> &[u32] {
        &self.header.dims
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Strict parse of an uncompressed IDX byte stream.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    if bytes.len() < 8 {
        return Err(DataError::TruncatedHeader {
            needed: 8,
            got: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0);
    let ndims = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(DataError::BadMagic(other)),
    };
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(DataError::TruncatedHeader {
            needed: header_len,
            got: bytes.len(),
        });
    }
    let dims: Vec<u32> = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i)).collect();
    let header = IdxHeader { magic, dims };
    let expected = header.payload_len();
    let payload = &bytes[header_len..];
    if payload.len() < expected {
        return Err(DataError::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(DataError::TrailingBytes(payload.len() - expected));
    }
    Ok(IdxTensor {
        header,
        data: payload.to_vec(),
    })
}

/// Inverse of [`parse_idx`].
pub fn serialize_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.header.dims.len() + t.data.len());
    out.extend_from_slice(&t.header.magic.to_be_bytes());
    for d in &t.header.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

/// Decompresses gzip input (detected by its magic bytes); other input is returned as is.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>, DataError> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| DataError::Gzip(e.to_string()))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Reads `path`, falling back to `path.gz`.
pub fn read_idx_file(path: &Path) -> Result<IdxTensor> {
    let actual = if path.exists() {
        path.to_path_buf()
    } else {
        let gz = gz_path(path);
        if !gz.exists() {
            return Err(DataError::NotFound(path.to_path_buf()).into());
        }
        gz
    };
    let bytes = maybe_gunzip(std::fs::read(&actual)?)?;
    Ok(parse_idx(&bytes)?)
}

/// Pairs an image tensor with a label tensor; pixels stay in `[0, 255]`.
pub fn images_to_dataset<F: Real>(images: &IdxTensor, labels: &IdxTensor) -> Result<Dataset<F>> {
    if images.header.magic != MAGIC_IMAGES || labels.header.magic != MAGIC_LABELS {
        return Err(DataError::Malformed("expected an image tensor and a label tensor".into()).into());
    }
    let n = images.dims()[0] as usize;
    if labels.dims()[0] as usize != n {
        return Err(Error::dimension(format!(
            "{} images but {} labels",
            n,
            labels.dims()[0]
        )));
    }
    let features = images.dims()[1] as usize * images.dims()[2] as usize;
    let inputs = Array2::from_shape_vec((n, features), images.data.iter().map(|&p| F::of(p as f64)).collect())
        .expect("payload length checked by the parser");
    let targets = labels.data.iter().map(|&l| l as usize).collect();
    Dataset::new(inputs, Targets::Classes(targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_labels() {
        let t = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(t.dims(), &[0]);
        assert!(t.data.is_empty());
    }

    #[test]
    fn tiny_images_round_trip() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 255];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims(), &[2, 1, 1]);
        assert_eq!(t.data, vec![0, 255]);
        assert_eq!(serialize_idx(&t), bytes);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(DataError::TruncatedHeader { .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0]), Err(DataError::BadMagic(0x802))));
        assert!(matches!(parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1]), Err(DataError::TruncatedHeader { .. })));
        assert!(matches!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 7]),
            Err(DataError::TruncatedPayload { expected: 2, got: 1 })
        ));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 7, 7]), Err(DataError::TrailingBytes(1))));
    }

    #[test]
    fn gzip_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let raw = vec![0, 0, 8, 1, 0, 0, 0, 1, 4];
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(maybe_gunzip(gz).unwrap(), raw);
        assert_eq!(maybe_gunzip(raw.clone()).unwrap(), raw);
        assert!(matches!(maybe_gunzip(vec![0x1f, 0x8b, 1, 2]), Err(DataError::Gzip(_))));
    }
}
