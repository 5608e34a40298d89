//! Behavioral scoring: accuracy, token probability, logit difference, and the
//! normalizations that put intervention results on a task-relative scale.
//!
//! Scoring is split in two stages so a forward pass is paid once per example:
//! `score_dataset` extracts an [`ExampleScore`] per example, and the
//! aggregate operations fold those in index order (bitwise-reproducible
//! regardless of how the scores were produced).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};
use crate::model::{forward_traced, Model};
use crate::rng;
use crate::task::{distinct_requests, eval_request, OrionExample, Request, TaskDataset};
use crate::tensor;
use crate::tokenizer::Vocabulary;

/// Full next-token distribution from a logit row, with the partition function
/// accumulated in f64. Sums to 1 within 1e-6.
pub fn next_token_distribution(logits: &[f32]) -> Vec<f64> {
    let mut max = f32::NEG_INFINITY;
    for v in logits {
        if *v > max {
            max = *v;
        }
    }
    let exps: Vec<f64> = logits
        .iter()
        .map(|&v| libm::exp(f64::from(v - max)))
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Everything the aggregate metrics need from one example's final logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleScore {
    pub label_id: u32,
    pub predicted_id: u32,
    pub label_prob: f64,
    pub label_logit: f64,
    /// Mean logit over the answers of the other requests answerable on this
    /// context; `None` when the context admits no alternative request.
    pub alt_mean_logit: Option<f64>,
}

impl ExampleScore {
    pub fn correct(&self) -> bool {
        self.predicted_id == self.label_id
    }

    pub fn logit_diff(&self) -> Option<f64> {
        self.alt_mean_logit.map(|alt| self.label_logit - alt)
    }
}

/// Logits of the answers to every request in `requests` other than the
/// example's own, evaluated on the example's context. Requests the context
/// cannot answer are skipped.
pub(crate) fn alt_answer_logits(
    vocab: &Vocabulary,
    requests: &[Request],
    example: &OrionExample,
    logits: &[f32],
) -> Result<Vec<f64>> {
    Ok(alt_answer_ids(vocab, requests, example)?
        .into_iter()
        .map(|id| f64::from(logits[id as usize]))
        .collect())
}

/// Token ids of the other requests' answers on this example's context.
pub(crate) fn alt_answer_ids(
    vocab: &Vocabulary,
    requests: &[Request],
    example: &OrionExample,
) -> Result<Vec<u32>> {
    let mut alts = Vec::new();
    for request in requests {
        if *request == example.request {
            continue;
        }
        let Ok(answer) = eval_request(request, &example.context) else {
            continue;
        };
        let id = vocab.token_id(&answer).ok_or_else(|| {
            OrionError::Metric(format!(
                "alternative answer {answer:?} is not a single token"
            ))
        })?;
        alts.push(id);
    }
    Ok(alts)
}

/// Scores one example from its final-position logits. `requests` is the
/// dataset's distinct request set, used for the logit-difference baseline.
pub fn score_from_logits(
    vocab: &Vocabulary,
    requests: &[Request],
    example: &OrionExample,
    logits: &[f32],
) -> Result<ExampleScore> {
    let label_id = vocab.token_id(&example.label_token).ok_or_else(|| {
        OrionError::Metric(format!(
            "label {:?} is not a single token",
            example.label_token
        ))
    })?;
    let predicted_id = tensor::argmax(logits) as u32;
    let label_prob = tensor::softmax_probs_at(logits, &[label_id])[0];
    let label_logit = f64::from(logits[label_id as usize]);
    let alts = alt_answer_logits(vocab, requests, example, logits)?;
    let alt_mean_logit = if alts.is_empty() {
        None
    } else {
        Some(alts.iter().sum::<f64>() / alts.len() as f64)
    };
    Ok(ExampleScore {
        label_id,
        predicted_id,
        label_prob,
        label_logit,
        alt_mean_logit,
    })
}

/// One forward pass per example, in index order.
pub fn score_dataset(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
) -> Result<Vec<ExampleScore>> {
    let requests: Vec<Request> = distinct_requests(dataset)
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let mut scores = Vec::with_capacity(dataset.examples.len());
    for example in &dataset.examples {
        let ids = vocab.encode_prompt(&example.prompt_text)?;
        let trace = forward_traced(model, &ids)?;
        scores.push(score_from_logits(vocab, &requests, example, &trace.last_logits)?);
    }
    Ok(scores)
}

pub fn accuracy_of(scores: &[ExampleScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().filter(|s| s.correct()).count();
    hits as f64 / scores.len() as f64
}

pub fn token_probability_of(scores: &[ExampleScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.label_prob).sum::<f64>() / scores.len() as f64
}

/// Mean logit difference over examples that admit at least one alternative
/// request; `None` when no example does.
pub fn logit_difference_of(scores: &[ExampleScore]) -> Option<f64> {
    let diffs: Vec<f64> = scores.iter().filter_map(ExampleScore::logit_diff).collect();
    if diffs.is_empty() {
        None
    } else {
        Some(diffs.iter().sum::<f64>() / diffs.len() as f64)
    }
}

/// Fraction of examples whose argmax next token is the label.
pub fn accuracy(model: &Model, vocab: &Vocabulary, dataset: &TaskDataset) -> Result<f64> {
    Ok(accuracy_of(&score_dataset(model, vocab, dataset)?))
}

/// Mean probability mass on the label token.
pub fn token_probability(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
) -> Result<f64> {
    Ok(token_probability_of(&score_dataset(model, vocab, dataset)?))
}

/// Mean of `logit(target) - mean(logit of other requests' answers)`, with the
/// target token chosen per example by `target_token_fn` (the label, for the
/// plain task metric). Examples whose context admits only one request are
/// excluded; it is an error if every example is.
pub fn logit_difference<F>(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
    target_token_fn: F,
) -> Result<f64>
where
    F: Fn(&OrionExample) -> String,
{
    let requests: Vec<Request> = distinct_requests(dataset)
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let mut diffs = Vec::new();
    for example in &dataset.examples {
        let target = target_token_fn(example);
        let target_id = vocab.token_id(&target).ok_or_else(|| {
            OrionError::Metric(format!("target {target:?} is not a single token"))
        })?;
        let ids = vocab.encode_prompt(&example.prompt_text)?;
        let trace = forward_traced(model, &ids)?;
        let alts = alt_answer_logits(vocab, &requests, example, &trace.last_logits)?;
        if alts.is_empty() {
            continue;
        }
        let alt_mean = alts.iter().sum::<f64>() / alts.len() as f64;
        diffs.push(f64::from(trace.last_logits[target_id as usize]) - alt_mean);
    }
    if diffs.is_empty() {
        return Err(OrionError::Metric(
            "no example admits an alternative request".into(),
        ));
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Chance of answering correctly by responding to a uniformly drawn request
/// answerable on the same context instead of the asked one. Estimated with
/// one draw per example from a stream derived from `seed`; model-free.
pub fn random_guess_accuracy(dataset: &TaskDataset, seed: u64) -> Result<f64> {
    if dataset.examples.is_empty() {
        return Err(OrionError::Metric("empty dataset".into()));
    }
    let requests: Vec<Request> = distinct_requests(dataset)
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let mut hits = 0usize;
    for (i, example) in dataset.examples.iter().enumerate() {
        let mut r = rng::derive(seed, &format!("random_guess/{i}"));
        let answers: Vec<String> = requests
            .iter()
            .filter_map(|rq| eval_request(rq, &example.context).ok())
            .collect();
        if answers.is_empty() {
            return Err(OrionError::Metric(format!(
                "example {i}: no request answerable on its own context"
            )));
        }
        let guess = &answers[r.gen_range(0..answers.len())];
        if *guess == example.label_token {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.examples.len() as f64)
}

/// Per-task normalization constants, persisted next to the dataset so every
/// later sweep divides by the same numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskBaseline {
    pub task_id: String,
    pub model_id: String,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_correct_prob: f64,
    pub random_guess_accuracy: f64,
    pub logit_diff: f64,
}

/// Scores the dataset once and fills every baseline field. `logit_diff` is 0
/// when no example admits an alternative request (single-request tasks).
pub fn compute_baseline(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
    task_id: &str,
    seed: u64,
) -> Result<TaskBaseline> {
    let scores = score_dataset(model, vocab, dataset)?;
    Ok(TaskBaseline {
        task_id: task_id.to_string(),
        model_id: model.cfg.model_id.clone(),
        seed,
        accuracy: accuracy_of(&scores),
        mean_correct_prob: token_probability_of(&scores),
        random_guess_accuracy: random_guess_accuracy(dataset, seed)?,
        logit_diff: logit_difference_of(&scores).unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Probability,
    Accuracy,
}

/// Probability kind divides by the baseline correct-token probability;
/// accuracy kind maps random guessing to 0 and baseline accuracy to 1. The
/// result may exceed 1 or fall below 0.
pub fn normalize(value: f64, baseline: &TaskBaseline, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::Probability => {
            let denom = baseline.mean_correct_prob;
            if denom.abs() < 1e-9 {
                return Err(OrionError::Metric(
                    "baseline mean_correct_prob is ~0; normalization undefined".into(),
                ));
            }
            Ok(value / denom)
        }
        NormKind::Accuracy => {
            let denom = baseline.accuracy - baseline.random_guess_accuracy;
            if denom.abs() < 1e-9 {
                return Err(OrionError::Metric(
                    "baseline accuracy equals random guess; normalization undefined".into(),
                ));
            }
            Ok((value - baseline.random_guess_accuracy) / denom)
        }
    }
}
