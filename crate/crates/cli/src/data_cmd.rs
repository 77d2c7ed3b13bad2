//! `data fetch` and `data inspect`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nalign::data::{maybe_gunzip, parse_cifar10_bin, parse_idx, DataError, ImageSet};
use nalign::{Error, Result};

use crate::config::hex;

const BUILTIN_MANIFEST: &str = include_str!("checksums.json");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetEntry {
    pub base_url: String,
    /// File name to SHA-256 of the decompressed file; `null` means not pinned.
    pub files: BTreeMap<String, Option<String>>,
}

pub type ChecksumManifest = BTreeMap<String, SetEntry>;

pub fn load_manifest(path: Option<&Path>) -> Result<ChecksumManifest> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config(format!("cannot read checksum manifest {}: {e}", p.display())))?,
        None => BUILTIN_MANIFEST.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| Error::config(format!("invalid checksum manifest: {e}")))
}

fn read_source(source: &str, file: &str) -> Result<Vec<u8>> {
    if source.starts_with("http://") || source.starts_with("https://") {
        let url = format!("{}/{file}.gz", source.trim_end_matches('/'));
        let resp = ureq::get(&url)
            .call()
            .map_err(|e| DataError::Malformed(format!("download of {url} failed: {e}")))?;
        let mut bytes = Vec::new();
        resp.into_body()
            .into_reader()
            .read_to_end(&mut bytes)
            .map_err(|e| DataError::Malformed(format!("download of {url} failed: {e}")))?;
        return Ok(bytes);
    }
    let dir = PathBuf::from(source.strip_prefix("file://").unwrap_or(source));
    let raw = dir.join(file);
    let gz = dir.join(format!("{file}.gz"));
    let path = if raw.exists() { raw } else { gz };
    if !path.exists() {
        return Err(DataError::NotFound(dir.join(file)).into());
    }
    Ok(std::fs::read(path)?)
}

/// Retrieves all files of a set, verifies every checksum, and only then
/// moves them into `cache/<set>/`. On any failure the cache is untouched.
pub fn fetch(set: ImageSet, cache: &Path, manifest: &ChecksumManifest, source: Option<&str>) -> Result<Value> {
    let name = set.dir_name();
    let entry = manifest
        .get(name)
        .ok_or_else(|| Error::config(format!("checksum manifest has no entry for {name}")))?;
    let source = source.unwrap_or(&entry.base_url);
    let mut verified = Vec::new();
    for (file, expected) in &entry.files {
        let expected = expected.as_ref().ok_or_else(|| {
            Error::config(format!("no pinned checksum for {name}/{file}; supply one with --manifest"))
        })?;
        let bytes = maybe_gunzip(read_source(source, file)?)?;
        let got = hex(&Sha256::digest(&bytes));
        if &got != expected {
            return Err(DataError::Checksum { name: format!("{name}/{file}"), expected: expected.clone(), got }.into());
        }
        parse_idx(&bytes)?;
        verified.push((file.clone(), bytes, got));
    }
    let dest = cache.join(name);
    std::fs::create_dir_all(&dest)?;
    let mut files = Vec::new();
    for (file, bytes, sha) in verified {
        let tmp = dest.join(format!(".{file}.partial"));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, dest.join(&file))?;
        files.push(json!({"file": file, "sha256": sha, "bytes": bytes.len()}));
    }
    Ok(json!({"set": name, "cache": dest, "files": files}))
}

/// Header dump of an IDX file (raw or gzip) or a CIFAR-10 binary batch.
pub fn inspect(path: &Path) -> Result<Value> {
    if !path.exists() {
        return Err(DataError::NotFound(path.to_path_buf()).into());
    }
    let bytes = maybe_gunzip(std::fs::read(path)?)?;
    if path.extension().is_some_and(|e| e == "bin") {
        let d = parse_cifar10_bin::<f32>(&bytes)?;
        let mut hist = [0usize; 10];
        for &l in d.labels().expect("classification") {
            hist[l] += 1;
        }
        return Ok(json!({"format": "cifar10", "records": d.len(), "label_counts": hist}));
    }
    let t = parse_idx(&bytes)?;
    Ok(json!({
        "format": "idx",
        "magic": format!("0x{:08x}", t.header.magic),
        "dims": t.dims(),
        "count": t.dims()[0],
        "sha256": hex(&Sha256::digest(&bytes)),
    }))
}
