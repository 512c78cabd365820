//! File formats: CSV traces and overlays, JSON documents and content hashes.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a trace back yields bit-identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::TraceRecord;
use crate::envelope::OverlayRow;
use crate::error::{Error, Result};
use crate::sinet::SimilarityRow;

pub const TRACE_HEADER: &str = "step,loss,rho,grad_norm,eff_grad_norm,eff_lr,cos_dist,train_error";
pub const OVERLAY_HEADER: &str = "step,cos_dist,delta_min,delta_max";
pub const SIMILARITY_HEADER: &str = "step,cosine_sim,ensemble_err,single_err";

/// SHA-256 over git's blob framing (`blob <len>\0<bytes>`), hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},",
            r.step, r.loss, r.rho, r.grad_norm, r.eff_grad_norm, r.eff_lr, r.cos_dist
        );
        if let Some(e) = r.train_error {
            let _ = write!(out, "{e}");
        }
        out.push('\n');
    }
    out
}

pub fn overlay_csv(rows: &[OverlayRow]) -> String {
    let mut out = String::from(OVERLAY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.cos_dist, r.delta_min, r.delta_max);
    }
    out
}

pub fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let mut out = String::from(SIMILARITY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.cosine_sim, r.ensemble_err, r.single_err);
    }
    out
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {s:?} in column {col}")))
}

/// Parses a trace CSV. Columns are located by header name, so extra columns
/// are ignored; `train_error` may be absent or empty.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Config("empty trace file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let required = ["step", "loss", "rho", "grad_norm", "eff_grad_norm", "eff_lr", "cos_dist"];
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = find(name).ok_or_else(|| Error::Config(format!("trace header lacks column {name}")))?;
    }
    let err_col = find("train_error");
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        let get = |k: usize| -> Result<&str> {
            f.get(k).copied().ok_or_else(|| Error::Config(format!("line {n}: too few columns")))
        };
        let train_error = match err_col.and_then(|k| f.get(k)).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(parse_field(s, n, "train_error")?),
        };
        out.push(TraceRecord {
            step: parse_field(get(idx[0])?, n, "step")?,
            loss: parse_field(get(idx[1])?, n, "loss")?,
            rho: parse_field(get(idx[2])?, n, "rho")?,
            grad_norm: parse_field(get(idx[3])?, n, "grad_norm")?,
            eff_grad_norm: parse_field(get(idx[4])?, n, "eff_grad_norm")?,
            eff_lr: parse_field(get(idx[5])?, n, "eff_lr")?,
            cos_dist: parse_field(get(idx[6])?, n, "cos_dist")?,
            train_error,
        });
    }
    Ok(out)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    parse_trace_csv(&read_string(path)?)
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_string(path)?)?)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// A file written into an artifact directory, named relative to that
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub bytes: u64,
    pub hash: String,
}

/// Writes `bytes` to `dir/name` and returns its reference.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<ArtifactRef> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(ArtifactRef { path: name.to_string(), bytes: bytes.len() as u64, hash: content_hash(bytes) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashMismatch {
    pub path: PathBuf,
    pub expected: String,
    pub found: Option<String>,
}

/// Re-hashes a referenced artifact. `Ok(None)` means it matches.
pub fn check_artifact(dir: &Path, artifact: &ArtifactRef) -> Result<Option<HashMismatch>> {
    let path = dir.join(&artifact.path);
    let found = match fs::read(&path) {
        Ok(bytes) => Some(content_hash(&bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&path, e)),
    };
    if found.as_deref() == Some(artifact.hash.as_str()) {
        Ok(None)
    } else {
        Ok(Some(HashMismatch { path, expected: artifact.hash.clone(), found }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, loss: f64, err: Option<f64>) -> TraceRecord {
        TraceRecord {
            step,
            loss,
            rho: 1.0 / 3.0,
            grad_norm: 1e-300,
            eff_grad_norm: 2.5,
            eff_lr: 9.0,
            cos_dist: 0.1 + 0.2,
            train_error: err,
        }
    }

    #[test]
    fn empty_blob_hash_matches_git_sha256() {
        // `git hash-object --object-format=sha256 /dev/null`
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_eq!(
            content_hash(b"hello"),
            "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60"
        );
    }

    #[test]
    fn trace_roundtrip_is_exact() {
        let rows = vec![rec(0, 0.123_456_789_012_345_68, None), rec(1, f64::MIN_POSITIVE, Some(0.25))];
        let text = trace_csv(&rows);
        assert!(text.starts_with(TRACE_HEADER));
        let back = parse_trace_csv(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(trace_csv(&back), text);
    }

    #[test]
    fn malformed_trace_reports_line() {
        let text = format!("{TRACE_HEADER}\n0,1,1,1,1,1,0,\n1,x,1,1,1,1,0,\n");
        let err = parse_trace_csv(&text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_trace_csv("").is_err());
        assert!(parse_trace_csv("step,loss\n").is_err());
    }

    #[test]
    fn artifacts_hash_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_artifact(dir.path(), "sub/x.txt", b"hello").unwrap();
        assert_eq!(a.bytes, 5);
        assert_eq!(check_artifact(dir.path(), &a).unwrap(), None);
        fs::write(dir.path().join("sub/x.txt"), b"hellO").unwrap();
        assert!(check_artifact(dir.path(), &a).unwrap().is_some());
        fs::remove_file(dir.path().join("sub/x.txt")).unwrap();
        assert_eq!(check_artifact(dir.path(), &a).unwrap().unwrap().found, None);
    }
}
