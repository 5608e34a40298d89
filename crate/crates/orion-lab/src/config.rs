//! Declarative experiment configs. One JSON file drives every subcommand;
//! each command reads the fields it needs. Seeds are always explicit: there
//! is no entropy default anywhere in the pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use orion_core::intervene::{DEFAULT_LIMIT_THRESHOLD, DEFAULT_NDE_THRESHOLD, DEFAULT_N_CORRUPTED};
use orion_core::oversight::{DistractorKind, OversightVariant, DEFAULT_OVERSIGHT_N};
use orion_core::task::TaskKind;

use crate::artifacts::config_hash;
use crate::error::{LabError, Result};

fn default_limit_threshold() -> f64 {
    DEFAULT_LIMIT_THRESHOLD
}
fn default_nde_threshold() -> f64 {
    DEFAULT_NDE_THRESHOLD
}
fn default_n_corrupted() -> usize {
    DEFAULT_N_CORRUPTED
}
fn default_oversight_n() -> usize {
    DEFAULT_OVERSIGHT_N
}
fn default_variant() -> String {
    "D_b".to_string()
}
fn default_kinds() -> Vec<String> {
    DistractorKind::ALL.iter().map(|k| k.as_str().to_string()).collect()
}
fn default_workers() -> usize {
    1
}
fn default_de_examples() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model container directory (weights, manifest, config, tokenizer).
    pub model: PathBuf,
    /// Task kind string, e.g. "qa_base".
    pub task: String,
    pub seed: u64,
    pub n_examples: usize,
    pub n_pairs: usize,
    #[serde(default = "default_limit_threshold")]
    pub limit_threshold: f64,
    #[serde(default = "default_nde_threshold")]
    pub nde_threshold: f64,
    #[serde(default = "default_n_corrupted")]
    pub n_corrupted: usize,
    /// Dataset indices analysed by `direct-effect`.
    #[serde(default = "default_de_examples")]
    pub direct_effect_examples: Vec<usize>,
    /// Request-formation layer for oversight; calibrate via `limits` on the
    /// same model and task first.
    #[serde(default)]
    pub l2: Option<usize>,
    #[serde(default = "default_variant")]
    pub oversight_variant: String,
    #[serde(default = "default_kinds")]
    pub distractor_kinds: Vec<String>,
    #[serde(default = "default_oversight_n")]
    pub oversight_n: usize,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// The hash covers exactly the fields that determine artifact payloads;
/// `out_dir` (where files land) and `workers` (how fast) are excluded, which
/// doubles as the promise that neither may change any output byte.
#[derive(Serialize)]
struct HashedView<'a> {
    model: &'a Path,
    task: &'a str,
    seed: u64,
    n_examples: usize,
    n_pairs: usize,
    limit_threshold: f64,
    nde_threshold: f64,
    n_corrupted: usize,
    direct_effect_examples: &'a [usize],
    l2: Option<usize>,
    oversight_variant: &'a str,
    distractor_kinds: &'a [String],
    oversight_n: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| LabError::json(path, e))?;
        Ok(cfg)
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        TaskKind::parse(&self.task)
            .ok_or_else(|| LabError::Config(format!("unknown task kind {:?}", self.task)))
    }

    pub fn variant(&self) -> Result<OversightVariant> {
        OversightVariant::parse(&self.oversight_variant).ok_or_else(|| {
            LabError::Config(format!(
                "unknown oversight variant {:?} (expected D_b or D_c)",
                self.oversight_variant
            ))
        })
    }

    pub fn kinds(&self) -> Result<Vec<DistractorKind>> {
        self.distractor_kinds
            .iter()
            .map(|s| {
                DistractorKind::parse(s)
                    .ok_or_else(|| LabError::Config(format!("unknown distractor kind {s:?}")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model.is_dir() {
            return Err(LabError::Config(format!(
                "model container {} is not a directory",
                self.model.display()
            )));
        }
        self.task_kind()?;
        self.variant()?;
        self.kinds()?;
        if self.n_examples < 2 {
            return Err(LabError::Config("n_examples must be at least 2".into()));
        }
        if self.n_pairs == 0 || self.oversight_n == 0 {
            return Err(LabError::Config("n_pairs and oversight_n must be positive".into()));
        }
        if self.workers == 0 {
            return Err(LabError::Config("workers must be at least 1".into()));
        }
        if !(self.limit_threshold > 0.0 && self.limit_threshold < 1.0) {
            return Err(LabError::Config("limit_threshold must lie in (0, 1)".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(LabError::Config("out_dir must be set".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(&HashedView {
            model: &self.model,
            task: &self.task,
            seed: self.seed,
            n_examples: self.n_examples,
            n_pairs: self.n_pairs,
            limit_threshold: self.limit_threshold,
            nde_threshold: self.nde_threshold,
            n_corrupted: self.n_corrupted,
            direct_effect_examples: &self.direct_effect_examples,
            l2: self.l2,
            oversight_variant: &self.oversight_variant,
            distractor_kinds: &self.distractor_kinds,
            oversight_n: self.oversight_n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            model: dir.to_path_buf(),
            task: "qa_base".into(),
            seed: 7,
            n_examples: 10,
            n_pairs: 5,
            limit_threshold: DEFAULT_LIMIT_THRESHOLD,
            nde_threshold: DEFAULT_NDE_THRESHOLD,
            n_corrupted: DEFAULT_N_CORRUPTED,
            direct_effect_examples: vec![0],
            l2: None,
            oversight_variant: "D_b".into(),
            distractor_kinds: default_kinds(),
            oversight_n: DEFAULT_OVERSIGHT_N,
            out_dir: dir.join("out"),
            workers: 1,
        }
    }

    #[test]
    fn hash_ignores_out_dir_and_workers() {
        let dir = tempfile::tempdir().unwrap();
        let a = base(dir.path());
        let mut b = a.clone();
        b.out_dir = dir.path().join("elsewhere");
        b.workers = 8;
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        assert!(base(dir.path()).validate().is_ok());
        let mut bad = base(dir.path());
        bad.task = "nope".into();
        assert!(bad.validate().is_err());
        let mut bad = base(dir.path());
        bad.distractor_kinds = vec!["huge_model".into()];
        assert!(bad.validate().is_err());
        let mut bad = base(dir.path());
        bad.model = dir.path().join("missing");
        assert!(bad.validate().is_err());
        let mut bad = base(dir.path());
        bad.workers = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"{{"model": {:?}, "task": "induction", "seed": 3,
                "n_examples": 20, "n_pairs": 10, "out_dir": {:?}}}"#,
            dir.path().to_str().unwrap(),
            dir.path().join("out").to_str().unwrap()
        );
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.oversight_n, DEFAULT_OVERSIGHT_N);
        assert_eq!(cfg.distractor_kinds.len(), 4);
        assert!(cfg.l2.is_none());
        assert!(cfg.validate().is_ok());
    }
}
