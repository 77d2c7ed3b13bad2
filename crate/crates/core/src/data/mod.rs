//! Dataset ingestion and generation.

mod cifar;
mod idx;
mod normalize;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cifar::{load_cifar10, parse_cifar10_bin, CIFAR_RECORD_LEN};
pub use idx::{images_to_dataset, maybe_gunzip, parse_idx, read_idx_file, serialize_idx, IdxHeader, IdxTensor};
pub use normalize::{normalize, Normalization, Normalizer};
pub use synth::{gen_blobs, gen_polynomial, PolyKind};

use crate::nn::Dataset;
use crate::{Real, Result};

/// Malformed or missing input data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic number 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated header: need {needed} bytes, got {got}")]
    TruncatedHeader { needed: usize, got: usize },
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("CIFAR-10 input length {0} is not a multiple of 3073")]
    CifarLength(usize),
    #[error("CIFAR-10 record {record} has label {label} > 9")]
    CifarLabel { record: usize, label: u8 },
    #[error("gzip decoding failed: {0}")]
    Gzip(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("checksum mismatch for {name}: expected {expected}, got {got}")]
    Checksum { name: String, expected: String, got: String },
}

impl DataError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            DataError::BadMagic(_) => "bad_magic",
            DataError::TruncatedHeader { .. } => "truncated_header",
            DataError::TruncatedPayload { .. } => "truncated_payload",
            DataError::TrailingBytes(_) => "trailing_bytes",
            DataError::CifarLength(_) => "cifar_length",
            DataError::CifarLabel { .. } => "cifar_label",
            DataError::Gzip(_) => "gzip",
            DataError::Malformed(_) => "malformed",
            DataError::NotFound(_) => "not_found",
            DataError::Checksum { .. } => "checksum",
        }
    }
}

/// Environment variable naming the dataset cache directory.
pub const CACHE_ENV: &str = "NALIGN_DATA_DIR";

/// Cache directory from [`CACHE_ENV`], else `~/.cache/nalign`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("nalign")
}

/// IDX image datasets with the standard file names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSet {
    Mnist,
    FashionMnist,
}

impl ImageSet {
    pub fn dir_name(self) -> &'static str {
        match self {
            ImageSet::Mnist => "mnist",
            ImageSet::FashionMnist => "fashion-mnist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Path of the images or labels file (without a `.gz` suffix).
pub fn idx_path(cache: &Path, set: ImageSet, split: Split, labels: bool) -> PathBuf {
    let file = if labels {
        format!("{}-labels-idx1-ubyte", split.prefix())
    } else {
        format!("{}-images-idx3-ubyte", split.prefix())
    };
    cache.join(set.dir_name()).join(file)
}

/// Whether both splits of `set` are present in `cache` (raw or gzipped).
pub fn image_set_available(cache: &Path, set: ImageSet) -> bool {
    [Split::Train, Split::Test].iter().all(|&split| {
        [false, true].iter().all(|&labels| {
            let p = idx_path(cache, set, split, labels);
            p.exists() || gz_path(&p).exists()
        })
    })
}

pub(crate) fn gz_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".gz");
    PathBuf::from(s)
}

/// Loads one split as raw pixel values in `[0, 255]` with class labels.
pub fn load_image_set<F: Real>(cache: &Path, set: ImageSet, split: Split) -> Result<Dataset<F>> {
    let images = read_idx_file(&idx_path(cache, set, split, false))?;
    let labels = read_idx_file(&idx_path(cache, set, split, true))?;
    images_to_dataset(&images, &labels)
}
