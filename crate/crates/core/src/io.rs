//! Shared file plumbing: versioned JSON envelopes, digests, raw binary32.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    body: T,
}

pub(crate) fn to_versioned_json<T: Serialize>(format: &str, version: u32, body: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&EnvelopeOut {
        format,
        version,
        body,
    })?;
    text.push('\n');
    Ok(text)
}

pub(crate) fn write_versioned_json<T: Serialize>(
    path: &Path,
    format: &str,
    version: u32,
    body: &T,
) -> Result<()> {
    fs::write(path, to_versioned_json(format, version, body)?)?;
    Ok(())
}

pub(crate) fn parse_versioned_json<T: DeserializeOwned>(
    text: &str,
    path: &Path,
    format: &str,
    version: u32,
) -> Result<T> {
    let header: EnvelopeHeader = serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if header.format != format {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected format `{format}`, found `{}`", header.format),
        });
    }
    if header.version != version {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: version,
            found: header.version,
        });
    }
    let env: EnvelopeIn<T> = serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(env.body)
}

pub(crate) fn read_versioned_json<T: DeserializeOwned>(
    path: &Path,
    format: &str,
    version: u32,
) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_versioned_json(&text, path, format, version)
}

/// Little-endian IEEE-754 binary32 encoding.
pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Reads exactly `count` binary32 values, reporting a truncated file otherwise.
pub(crate) fn read_f32_file(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    let expected = (count * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(f32_from_le_bytes(&bytes))
}
