//! On-disk experiment artifacts. Every JSON file is written atomically
//! (temp file + rename) and wrapped in an envelope carrying the producing
//! command, a schema tag, and the experiment's config hash, so downstream
//! commands can refuse mixed provenance.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const ARTIFACT_SCHEMA: &str = "orion-artifact-1";

/// Key-order-independent JSON rendering: objects are re-emitted with sorted
/// keys recursively, so hashing is stable under config field reordering.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn emit(v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    emit(&map[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(xs) => {
                out.push('[');
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    emit(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
        }
    }
    let mut out = String::new();
    emit(value, &mut out);
    out
}

/// Hex SHA-256 of the canonical JSON form of any serializable value.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| LabError::Config(format!("unserializable config: {e}")))?;
    let mut h = Sha256::new();
    h.update(canonical_json(&v).as_bytes());
    let digest = h.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(hex, "{b:02x}").expect("hex write");
    }
    Ok(hex)
}

/// Envelope around every artifact payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema: String,
    /// Producing subcommand, e.g. "sweep".
    pub command: String,
    pub config_hash: String,
    pub payload: T,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| LabError::Container(format!("{} has no parent", path.display())))?;
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LabError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.flush().map_err(|e| LabError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

pub fn write_artifact<T: Serialize>(
    path: &Path,
    command: &str,
    config_hash: &str,
    payload: &T,
) -> Result<()> {
    let artifact = Artifact {
        schema: ARTIFACT_SCHEMA.to_string(),
        command: command.to_string(),
        config_hash: config_hash.to_string(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&artifact)
        .map_err(|e| LabError::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Read an artifact written by `producer`; a missing file is reported as a
/// pipeline error naming the command to run first.
pub fn read_artifact<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<Artifact<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(LabError::MissingArtifact(format!(
                "{} not found; run `{producer}` first",
                path.display()
            )));
        }
        Err(e) => return Err(LabError::io(path, e)),
    };
    let artifact: Artifact<T> =
        serde_json::from_str(&text).map_err(|e| LabError::json(path, e))?;
    if artifact.schema != ARTIFACT_SCHEMA {
        return Err(LabError::Validation(format!(
            "{}: schema {:?}, expected {ARTIFACT_SCHEMA:?}",
            path.display(),
            artifact.schema
        )));
    }
    Ok(artifact)
}

/// Cross-check that an upstream artifact came from the same experiment.
pub fn expect_hash<T>(path: &Path, artifact: &Artifact<T>, hash: &str) -> Result<()> {
    if artifact.config_hash != hash {
        return Err(LabError::Validation(format!(
            "{}: config hash {} does not match this run's {}; artifacts must not be mixed",
            path.display(),
            &artifact.config_hash[..12.min(artifact.config_hash.len())],
            &hash[..12.min(hash.len())]
        )));
    }
    Ok(())
}

/// Inventory of one experiment run, refreshed by every command.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub artifact_schema: String,
    /// command -> seconds spent, last run.
    pub timings: std::collections::BTreeMap<String, f64>,
    /// Relative paths of files this run has produced.
    pub files: Vec<String>,
}

pub fn record_path(out_dir: &Path) -> PathBuf {
    out_dir.join("run.json")
}

/// Merge one command's outputs into the run record. Timing is excluded from
/// all reproducibility comparisons; it lives only here.
pub fn update_record(
    out_dir: &Path,
    hash: &str,
    command: &str,
    seconds: f64,
    new_files: &[&Path],
) -> Result<()> {
    let path = record_path(out_dir);
    let mut record: RunRecord = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| LabError::json(&path, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => RunRecord::default(),
        Err(e) => return Err(LabError::io(&path, e)),
    };
    if !record.config_hash.is_empty() && record.config_hash != hash {
        return Err(LabError::Validation(format!(
            "{} belongs to config {}, not {}; use a fresh --out directory",
            path.display(),
            &record.config_hash[..12],
            &hash[..12.min(hash.len())]
        )));
    }
    record.config_hash = hash.to_string();
    record.artifact_schema = ARTIFACT_SCHEMA.to_string();
    record.timings.insert(command.to_string(), seconds);
    for f in new_files {
        let rel = f
            .strip_prefix(out_dir)
            .unwrap_or(f)
            .to_string_lossy()
            .into_owned();
        if !record.files.contains(&rel) {
            record.files.push(rel);
        }
    }
    record.files.sort();
    let mut text =
        serde_json::to_string_pretty(&record).map_err(|e| LabError::json(&path, e))?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())
}
