//! Binary checkpoint of a policy snapshot.
//!
//! ```text
//! b"SGFCKPT1"                magic
//! u32 (LE)                   manifest length in bytes
//! manifest (UTF-8)           "digest <net digest>\n"
//!                            "version <n>\n"
//!                            "param <name> <d0>x<d1>..\n" per group, in storage order
//! f64 (LE) * param count     parameters in storage order
//! ```

use std::path::Path;

use sigfolio_core::net::{NetConfig, NetError, PolicySnapshot};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SGFCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("checkpoint network {found} does not match configured {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

fn manifest(snapshot: &PolicySnapshot) -> String {
    let cfg = snapshot.config();
    let mut text = format!("digest {}\nversion {}\n", cfg.digest(), snapshot.version());
    for g in cfg.layout() {
        let dims: Vec<String> = g.shape.iter().map(usize::to_string).collect();
        text += &format!("param {} {}\n", g.name, dims.join("x"));
    }
    text
}

pub fn encode(snapshot: &PolicySnapshot) -> Vec<u8> {
    let text = manifest(snapshot);
    let mut out = Vec::with_capacity(12 + text.len() + 8 * snapshot.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in snapshot.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PolicySnapshot, CheckpointError> {
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let text = bytes.get(12..12 + len).ok_or(CheckpointError::Truncated)?;
    let text = std::str::from_utf8(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let bad = |m: &str| CheckpointError::Manifest(m.to_string());

    let mut lines = text.lines();
    let digest = lines.next().and_then(|l| l.strip_prefix("digest ")).ok_or_else(|| bad("missing digest"))?;
    let version: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("version "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing version"))?;
    let cfg = NetConfig::from_digest(digest)?;
    let expected = manifest(&PolicySnapshot::zeros(cfg)?);
    let params_expected: Vec<&str> = expected.lines().skip(2).collect();
    let params_found: Vec<&str> = lines.collect();
    if params_found != params_expected {
        return Err(bad("parameter shapes do not match the digest"));
    }

    let data = &bytes[12 + len..];
    let n = cfg.param_count();
    if data.len() != 8 * n {
        return Err(CheckpointError::Truncated);
    }
    let params = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(PolicySnapshot::new(cfg, version, params)?)
}

pub fn save(path: &Path, snapshot: &PolicySnapshot) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, encode(snapshot)).map_err(io)
}

pub fn load(path: &Path) -> Result<PolicySnapshot, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

/// Loads and checks the network shape against the configured one.
pub fn load_for(path: &Path, expected: &NetConfig) -> Result<PolicySnapshot, CheckpointError> {
    let snap = load(path)?;
    if snap.config() != expected {
        return Err(CheckpointError::DigestMismatch { expected: expected.digest(), found: snap.config().digest() });
    }
    Ok(snap)
}
