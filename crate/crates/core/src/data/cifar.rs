//! CIFAR-10 binary batches: records of one label byte followed by 3072 pixel
//! bytes (3 x 32 x 32, channel-major).

use std::path::Path;

use ndarray::Array2;

use super::DataError;
use crate::nn::{Dataset, Targets};
use crate::{Real, Result};

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Parses concatenated CIFAR-10 records; pixels stay in `[0, 255]`.
pub fn parse_cifar10_bin<F: Real>(bytes: &[u8]) -> Result<Dataset<F>> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DataError::CifarLength(bytes.len()).into());
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(DataError::CifarLabel { record, label }.into());
        }
        labels.push(label as usize);
        pixels.extend(chunk[1..].iter().map(|&p| F::of(p as f64)));
    }
    let inputs = Array2::from_shape_vec((n, CIFAR_RECORD_LEN - 1), pixels).expect("record length fixed");
    Dataset::new(inputs, Targets::Classes(labels))
}

/// Loads `data_batch_1..5.bin` (train) or `test_batch.bin` from `dir`.
pub fn load_cifar10<F: Real>(dir: &Path, train: bool) -> Result<Dataset<F>> {
    let files: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    };
    let mut bytes = Vec::new();
    for f in files {
        let p = dir.join(f);
        if !p.exists() {
            return Err(DataError::NotFound(p).into());
        }
        bytes.extend(std::fs::read(p)?);
    }
    parse_cifar10_bin(&bytes)
}
