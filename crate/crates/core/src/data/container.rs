//! The on-disk tensor container shared by datasets and adapter snapshots: a
//! directory holding a TOML `manifest` and raw little-endian payload files,
//! each guarded by a 64-bit FNV-1a checksum.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";

/// 64-bit FNV-1a of `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Element encoding of a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32Le,
    F64Le,
    U32Le,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::F64Le => "f64le",
            Dtype::U32Le => "u32le",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32Le | Dtype::U32Le => 4,
            Dtype::F64Le => 8,
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Dtype::F32Le, Dtype::F64Le, Dtype::U32Le]
            .into_iter()
            .find(|d| d.tag() == tag)
    }
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| v.to_le_bytes()).collect()
}

pub fn encode_u32(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|&v| v.to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect()
}

pub fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

pub fn decode_u32(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect()
}

/// Formats a checksum the way manifests record it.
pub fn checksum_hex(sum: u64) -> String {
    format!("{sum:016x}")
}

fn parse_checksum(manifest: &Path, file: &str, text: &str) -> Result<u64> {
    u64::from_str_radix(text, 16).map_err(|_| Error::Manifest {
        path: manifest.to_path_buf(),
        message: format!("checksum for {file} is not a 64-bit hex value: {text:?}"),
    })
}

/// Writes `bytes` to `dir/name` and returns the payload checksum.
pub fn write_payload(dir: &Path, name: &str, bytes: &[u8]) -> Result<u64> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(fnv1a64(bytes))
}

/// Reads `dir/name`, checking its length before its checksum.
pub fn read_payload(
    dir: &Path,
    name: &str,
    expected_len: usize,
    checksums: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let manifest = dir.join(MANIFEST_FILE);
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected_len {
        return Err(Error::TruncatedFile {
            file: name.to_string(),
            expected: expected_len,
            found: bytes.len(),
        });
    }
    let recorded = checksums.get(name).ok_or_else(|| Error::Manifest {
        path: manifest.clone(),
        message: format!("no checksum recorded for {name}"),
    })?;
    let expected = parse_checksum(&manifest, name, recorded)?;
    let found = fnv1a64(&bytes);
    if expected != found {
        return Err(Error::ChecksumMismatch {
            file: name.to_string(),
            expected,
            found,
        });
    }
    Ok(bytes)
}

/// Reads and parses `dir/manifest` as `T` after checking the format version.
pub fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let malformed = |message: String| Error::Manifest {
        path: path.clone(),
        message,
    };
    let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| malformed(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| malformed("missing integer format_version".into()))?;
    if version != FORMAT_VERSION as i64 {
        return Err(Error::FormatVersionMismatch {
            expected: FORMAT_VERSION,
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    toml::from_str(&text).map_err(|e| malformed(e.to_string()))
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(manifest).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Checks the dtype tag in a manifest.
pub fn expect_dtype(dir: &Path, found: &str, expected: Dtype) -> Result<()> {
    if Dtype::from_tag(found) == Some(expected) {
        Ok(())
    } else {
        Err(Error::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: format!("dtype {found:?} is not {:?}", expected.tag()),
        })
    }
}
