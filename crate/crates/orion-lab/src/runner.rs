//! One function per CLI subcommand. Every command validates the config,
//! reads its upstream artifacts (refusing mismatched config hashes), calls
//! into the analysis core, and writes its outputs atomically. Reruns with an
//! unchanged config reproduce byte-identical JSON.
//!
//! The worker pool parallelizes per-example forward passes (baseline
//! scoring, oversight checks) with index-ordered collection, so results are
//! independent of the worker count. Pair sweeps and direct effects run on
//! one worker; their inner loops dominate runtime only through the same
//! forward passes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use orion_core::intervene::{
    corrupted_pool, direct_effect_report, iia_from_sweep, limit_layers, residual_sweep,
    top_components, top_overlap, AlignmentScore, DirectEffectReport, LimitLayers, SweepResult,
};
use orion_core::metrics::{
    accuracy_of, logit_difference_of, random_guess_accuracy, score_from_logits,
    token_probability_of, ExampleScore, TaskBaseline,
};
use orion_core::model::{forward_traced, Model};
use orion_core::oversight::{
    build_oversight_dataset, check_prompt, predicate_a, predicate_b, prepare_trusted,
    validate_oversight, OversightDataset, OversightReport, OversightVariant,
};
use orion_core::task::{
    distinct_requests, generate_task, validate_dataset, OrionExample, Request, TaskDataset,
    ValidationReport,
};
use orion_core::tokenizer::Vocabulary;

use crate::artifacts::{
    expect_hash, read_artifact, update_record, write_artifact, write_atomic,
};
use crate::config::ExperimentConfig;
use crate::container::{load_container, load_vocabulary};
use crate::error::{LabError, Result};
use crate::report;

pub struct ArtifactPaths {
    out: PathBuf,
}

impl ArtifactPaths {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset.json")
    }
    pub fn validation(&self) -> PathBuf {
        self.out.join("validation.json")
    }
    pub fn baseline(&self) -> PathBuf {
        self.out.join("baseline.json")
    }
    pub fn sweep(&self) -> PathBuf {
        self.out.join("sweep.json")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.out.join("sweep.csv")
    }
    pub fn limits(&self) -> PathBuf {
        self.out.join("limits.json")
    }
    pub fn iia(&self) -> PathBuf {
        self.out.join("iia.json")
    }
    pub fn direct_effects(&self) -> PathBuf {
        self.out.join("direct_effects.json")
    }
    pub fn oversight(&self) -> PathBuf {
        self.out.join("oversight.json")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.txt")
    }
}

struct Ctx {
    hash: String,
    paths: ArtifactPaths,
    started: Instant,
}

fn ctx(cfg: &ExperimentConfig) -> Result<Ctx> {
    cfg.validate()?;
    Ok(Ctx {
        hash: cfg.hash()?,
        paths: ArtifactPaths::new(&cfg.out_dir),
        started: Instant::now(),
    })
}

fn finish(cfg: &ExperimentConfig, ctx: &Ctx, command: &str, files: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    update_record(
        &cfg.out_dir,
        &ctx.hash,
        command,
        ctx.started.elapsed().as_secs_f64(),
        &refs,
    )?;
    Ok(files)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Config(format!("worker pool: {e}")))
}

fn read_dataset(ctx: &Ctx) -> Result<TaskDataset> {
    let path = ctx.paths.dataset();
    let artifact = read_artifact::<TaskDataset>(&path, "generate")?;
    expect_hash(&path, &artifact, &ctx.hash)?;
    Ok(artifact.payload)
}

fn violation_count(report: &ValidationReport) -> usize {
    report.decomposable.len() + report.single_token.len() + report.monotasking.len()
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let vocab = load_vocabulary(&cfg.model)?;
    let dataset = generate_task(cfg.task_kind()?, cfg.seed, cfg.n_examples, &vocab)?;
    let report = validate_dataset(&dataset, &vocab);
    if !report.is_valid() {
        return Err(LabError::Validation(format!(
            "generated dataset violates {} desiderata checks",
            violation_count(&report)
        )));
    }
    write_artifact(&ctx.paths.dataset(), "generate", &ctx.hash, &dataset)?;
    finish(cfg, &ctx, "generate", vec![ctx.paths.dataset()])
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let dataset = read_dataset(&ctx)?;
    let vocab = load_vocabulary(&cfg.model)?;
    let report = validate_dataset(&dataset, &vocab);
    write_artifact(&ctx.paths.validation(), "validate", &ctx.hash, &report)?;
    let files = finish(cfg, &ctx, "validate", vec![ctx.paths.validation()])?;
    if !report.is_valid() {
        return Err(LabError::Validation(format!(
            "{} desiderata violations; details in {}",
            violation_count(&report),
            ctx.paths.validation().display()
        )));
    }
    Ok(files)
}

/// Index-ordered parallel scoring; aggregation matches
/// `metrics::compute_baseline` exactly.
fn score_parallel(
    pool: &rayon::ThreadPool,
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
) -> Result<Vec<ExampleScore>> {
    let requests: Vec<Request> = distinct_requests(dataset).into_iter().map(|(r, _)| r).collect();
    let scores = pool.install(|| {
        dataset
            .examples
            .par_iter()
            .map(|example| {
                let ids = vocab.encode_prompt(&example.prompt_text)?;
                let trace = forward_traced(model, &ids)?;
                score_from_logits(vocab, &requests, example, &trace.last_logits)
            })
            .collect::<orion_core::Result<Vec<_>>>()
    })?;
    Ok(scores)
}

pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let dataset = read_dataset(&ctx)?;
    let (model, vocab) = load_container(&cfg.model)?;
    let pool = pool(cfg.workers)?;
    let scores = score_parallel(&pool, &model, &vocab, &dataset)?;
    let baseline = TaskBaseline {
        task_id: cfg.task.clone(),
        model_id: model.cfg.model_id.clone(),
        seed: cfg.seed,
        accuracy: accuracy_of(&scores),
        mean_correct_prob: token_probability_of(&scores),
        random_guess_accuracy: random_guess_accuracy(&dataset, cfg.seed)?,
        logit_diff: logit_difference_of(&scores).unwrap_or(0.0),
    };
    write_artifact(&ctx.paths.baseline(), "baseline", &ctx.hash, &baseline)?;
    finish(cfg, &ctx, "baseline", vec![ctx.paths.baseline()])
}

fn read_baseline(ctx: &Ctx) -> Result<TaskBaseline> {
    let path = ctx.paths.baseline();
    let artifact = read_artifact::<TaskBaseline>(&path, "baseline")?;
    expect_hash(&path, &artifact, &ctx.hash)?;
    Ok(artifact.payload)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let dataset = read_dataset(&ctx)?;
    let baseline = read_baseline(&ctx)?;
    let (model, vocab) = load_container(&cfg.model)?;
    let sweep = residual_sweep(&model, &vocab, &dataset, &baseline, cfg.n_pairs, cfg.seed)?;
    write_artifact(&ctx.paths.sweep(), "sweep", &ctx.hash, &sweep)?;
    write_atomic(&ctx.paths.sweep_csv(), report::sweep_csv(&sweep).as_bytes())?;
    finish(cfg, &ctx, "sweep", vec![ctx.paths.sweep(), ctx.paths.sweep_csv()])
}

fn read_sweep(ctx: &Ctx) -> Result<SweepResult> {
    let path = ctx.paths.sweep();
    let artifact = read_artifact::<SweepResult>(&path, "sweep")?;
    expect_hash(&path, &artifact, &ctx.hash)?;
    Ok(artifact.payload)
}

pub fn cmd_limits(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let sweep = read_sweep(&ctx)?;
    let limits = limit_layers(&sweep, cfg.limit_threshold);
    write_artifact(&ctx.paths.limits(), "limits", &ctx.hash, &limits)?;
    finish(cfg, &ctx, "limits", vec![ctx.paths.limits()])
}

pub fn cmd_iia(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let sweep = read_sweep(&ctx)?;
    let baseline = read_baseline(&ctx)?;
    let limits_path = ctx.paths.limits();
    let limits = read_artifact::<LimitLayers>(&limits_path, "limits")?;
    expect_hash(&limits_path, &limits, &ctx.hash)?;
    let score = iia_from_sweep(&sweep, &limits.payload, &baseline)?;
    write_artifact(&ctx.paths.iia(), "iia", &ctx.hash, &score)?;
    finish(cfg, &ctx, "iia", vec![ctx.paths.iia()])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DirectEffectCell {
    pub example_index: usize,
    pub target: String,
    pub corrupted_indices: Vec<usize>,
    /// Components with NDE above the threshold, in display form ("a3.h7").
    pub top_components: Vec<String>,
    pub report: DirectEffectReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DirectEffectArtifact {
    pub nde_threshold: f64,
    pub cells: Vec<DirectEffectCell>,
    /// Mean pairwise Jaccard overlap of top-component sets; absent when
    /// fewer than two analysed examples or no pair has components.
    pub top_overlap: Option<f64>,
    pub top_overlap_note: Option<String>,
}

pub fn cmd_direct_effect(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let dataset = read_dataset(&ctx)?;
    let (model, vocab) = load_container(&cfg.model)?;
    let requests: Vec<Request> =
        distinct_requests(&dataset).into_iter().map(|(r, _)| r).collect();
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for &xi in &cfg.direct_effect_examples {
        let indices = corrupted_pool(&dataset, xi, cfg.n_corrupted, cfg.seed)?;
        let corrupted: Vec<&OrionExample> =
            indices.iter().map(|&j| &dataset.examples[j]).collect();
        let x = &dataset.examples[xi];
        let report = direct_effect_report(&model, &vocab, &requests, x, &corrupted, &x.label_token)?;
        let top: Vec<String> = top_components(&report, cfg.nde_threshold)
            .into_iter()
            .map(|c| c.to_string())
            .collect();
        cells.push(DirectEffectCell {
            example_index: xi,
            target: x.label_token.clone(),
            corrupted_indices: indices,
            top_components: top,
            report: report.clone(),
        });
        reports.push(report);
    }
    let (overlap, note) = if reports.len() >= 2 {
        match top_overlap(&reports, cfg.nde_threshold) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("needs at least two analysed examples".to_string()))
    };
    let artifact = DirectEffectArtifact {
        nde_threshold: cfg.nde_threshold,
        cells,
        top_overlap: overlap,
        top_overlap_note: note,
    };
    write_artifact(&ctx.paths.direct_effects(), "direct-effect", &ctx.hash, &artifact)?;
    finish(cfg, &ctx, "direct-effect", vec![ctx.paths.direct_effects()])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OversightGrid {
    pub variant: OversightVariant,
    pub l2: usize,
    pub n: usize,
    pub seed: u64,
    pub reports: Vec<OversightReport>,
}

/// Parallel per-example oversight evaluation; identical to
/// `oversight::evaluate_oversight`, with prompts checked across the pool.
pub fn evaluate_oversight_parallel(
    pool: &rayon::ThreadPool,
    model: &Model,
    vocab: &Vocabulary,
    dataset: &OversightDataset,
    l2: usize,
) -> Result<OversightReport> {
    if dataset.examples.is_empty() {
        return Err(LabError::Validation("empty oversight dataset".into()));
    }
    let trusted = prepare_trusted(model, vocab, &dataset.trusted, l2)?;
    let flags = pool.install(|| {
        dataset
            .examples
            .par_iter()
            .map(|ex| {
                let check = check_prompt(model, vocab, &trusted, &ex.prompt_text)?;
                let label_id = vocab.token_id(&ex.label_token).ok_or_else(|| {
                    orion_core::OrionError::Oversight(format!(
                        "label {:?} is not a single token",
                        ex.label_token
                    ))
                })?;
                Ok((
                    check.plain_id == label_id,
                    check.hardened_id == label_id,
                    predicate_a(&check),
                    predicate_b(&check, &trusted),
                ))
            })
            .collect::<orion_core::Result<Vec<_>>>()
    })?;
    let count = |f: &dyn Fn(&(bool, bool, bool, bool)) -> bool| {
        flags.iter().filter(|t| f(t)).count()
    };
    let pct = |k: usize| 100.0 * k as f64 / flags.len() as f64;
    Ok(OversightReport {
        variant: dataset.variant,
        distractor_kind: dataset.distractor_kind,
        n: flags.len(),
        l2,
        accuracy_plain: pct(count(&|t| t.0)),
        accuracy_hardened: pct(count(&|t| t.1)),
        freq_a: pct(count(&|t| t.2)),
        freq_b: pct(count(&|t| t.3)),
        freq_a_or_b: pct(count(&|t| t.2 || t.3)),
    })
}

pub fn cmd_oversight(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let l2 = cfg.l2.ok_or_else(|| {
        LabError::Config(
            "oversight needs `l2`; calibrate it by running sweep + limits on this model's \
             qa_base task"
                .into(),
        )
    })?;
    let variant = cfg.variant()?;
    let kinds = cfg.kinds()?;
    let (model, vocab) = load_container(&cfg.model)?;
    let pool = pool(cfg.workers)?;
    let mut reports = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let dataset = build_oversight_dataset(variant, kind, cfg.oversight_n, cfg.seed, &vocab)?;
        let violations = validate_oversight(&dataset, &vocab)?;
        if !violations.is_empty() {
            return Err(LabError::Validation(format!(
                "oversight dataset ({} kind {}) has {} violations",
                variant.as_str(),
                kind.as_str(),
                violations.len()
            )));
        }
        reports.push(evaluate_oversight_parallel(&pool, &model, &vocab, &dataset, l2)?);
    }
    let grid = OversightGrid {
        variant,
        l2,
        n: cfg.oversight_n,
        seed: cfg.seed,
        reports,
    };
    write_artifact(&ctx.paths.oversight(), "oversight", &ctx.hash, &grid)?;
    finish(cfg, &ctx, "oversight", vec![ctx.paths.oversight()])
}

/// Everything `report` can find, all hash-checked against the live config.
pub struct ReportInputs {
    pub baseline: Option<TaskBaseline>,
    pub sweep: Option<SweepResult>,
    pub limits: Option<LimitLayers>,
    pub iia: Option<AlignmentScore>,
    pub oversight: Option<OversightGrid>,
}

fn try_read<T: serde::de::DeserializeOwned>(
    ctx: &Ctx,
    path: PathBuf,
    producer: &str,
) -> Result<Option<T>> {
    match read_artifact::<T>(&path, producer) {
        Ok(artifact) => {
            expect_hash(&path, &artifact, &ctx.hash)?;
            Ok(Some(artifact.payload))
        }
        Err(LabError::MissingArtifact(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ctx = ctx(cfg)?;
    let inputs = ReportInputs {
        baseline: try_read(&ctx, ctx.paths.baseline(), "baseline")?,
        sweep: try_read(&ctx, ctx.paths.sweep(), "sweep")?,
        limits: try_read(&ctx, ctx.paths.limits(), "limits")?,
        iia: try_read(&ctx, ctx.paths.iia(), "iia")?,
        oversight: try_read(&ctx, ctx.paths.oversight(), "oversight")?,
    };
    if inputs.baseline.is_none() && inputs.sweep.is_none() && inputs.oversight.is_none() {
        return Err(LabError::MissingArtifact(
            "nothing to report; run `baseline`, `sweep`, or `oversight` first".into(),
        ));
    }
    let text = report::render_report(cfg, &ctx.hash, &inputs);
    write_atomic(&ctx.paths.report(), text.as_bytes())?;
    finish(cfg, &ctx, "report", vec![ctx.paths.report()])
}
