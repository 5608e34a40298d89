//! Interchange interventions: residual-stream patching sweeps, request
//! patching, path patching for direct effects, and attention-pattern
//! patching, plus the statistics derived from them (limit layers, IIA,
//! component overlap).
//!
//! Layer indexing follows the hook convention: patching "at layer l" replaces
//! the residual entering block `l` at the last position, so a sweep covers
//! `l` in `[0, n_layers)` and `l = 0` swaps the embedding output.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};
use crate::metrics::{self, normalize, NormKind, TaskBaseline};
use crate::model::{
    forward, forward_components, forward_traced, logits_from_final, resume_from, ComponentTrace,
    ForwardOutput, HookPoint, Model, Override, Pos,
};
use crate::rng;
use crate::task::{cross_label, OrionExample, Request, TaskDataset};
use crate::tensor;
use crate::tokenizer::Vocabulary;

/// A source/target prompt pair with the three label tokens every patching
/// experiment is scored against: the source's own answer `R1(C1)`, the
/// target's own answer `R2(C2)`, and the source request applied to the
/// target context `R1(C2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchPair {
    pub x1: OrionExample,
    pub x2: OrionExample,
    pub r1c1: String,
    pub r1c2: String,
    pub r2c2: String,
}

impl PatchPair {
    /// Fails when the source request is not answerable on the target context.
    pub fn new(x1: &OrionExample, x2: &OrionExample) -> Result<Self> {
        let r1c2 = cross_label(x1, x2)?;
        Ok(Self {
            x1: x1.clone(),
            x2: x2.clone(),
            r1c1: x1.label_token.clone(),
            r1c2,
            r2c2: x2.label_token.clone(),
        })
    }
}

/// Uniform pair sample without replacement, keeping only pairs whose three
/// labels are pairwise distinct (collisions would make the patched outcome
/// unattributable) and whose requests differ.
pub fn sample_pairs(dataset: &TaskDataset, n_pairs: usize, seed: u64) -> Result<Vec<PatchPair>> {
    let n = dataset.examples.len();
    if n < 2 {
        return Err(OrionError::Intervention("need at least 2 examples".into()));
    }
    let mut r = rng::derive(seed, "pairs");
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    let budget = 1000 * n_pairs.max(1);
    while pairs.len() < n_pairs {
        attempts += 1;
        if attempts > budget {
            return Err(OrionError::Intervention(format!(
                "sampled {} of {n_pairs} usable pairs in {budget} attempts",
                pairs.len()
            )));
        }
        let i = r.gen_range(0..n);
        let j = r.gen_range(0..n);
        if i == j || seen.contains(&(i, j)) {
            continue;
        }
        seen.insert((i, j));
        let x1 = &dataset.examples[i];
        let x2 = &dataset.examples[j];
        if x1.request == x2.request {
            continue;
        }
        let Ok(pair) = PatchPair::new(x1, x2) else {
            continue;
        };
        if pair.r1c1 == pair.r1c2 || pair.r1c2 == pair.r2c2 || pair.r1c1 == pair.r2c2 {
            continue;
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// `M(target | points <- points(source))`: capture the listed points on the
/// source in one pass, then run the target with those values overridden.
/// `Last` positions resolve against each sequence's own length.
pub fn interchange(
    model: &Model,
    target: &[u32],
    source: &[u32],
    points: &[HookPoint],
) -> Result<ForwardOutput> {
    let src = forward(model, source, points, &[])?;
    let mut overrides = Vec::with_capacity(points.len());
    for point in points {
        let value = src
            .cache
            .get(*point)
            .ok_or_else(|| {
                OrionError::Intervention(format!("point {point:?} not captured on source"))
            })?
            .clone();
        overrides.push(Override::Replace { point: *point, value });
    }
    forward(model, target, &[], &overrides)
}

/// Per-layer scores of one residual-stream patching sweep, averaged over
/// pairs. Probabilities are normalized by the baseline correct-token
/// probability; `acc_*` are raw interchange accuracies in `[0,1]` and
/// `acc_r1c2_norm` maps random guessing to 0 and baseline accuracy to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepLayer {
    pub layer: usize,
    pub p_r1c1: f64,
    pub p_r1c2: f64,
    pub p_r2c2: f64,
    pub acc_r1c1: f64,
    pub acc_r1c2: f64,
    pub acc_r2c2: f64,
    pub acc_r1c2_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub n_pairs: usize,
    pub layers: Vec<SweepLayer>,
}

#[derive(Default, Clone)]
struct LayerSums {
    p: [f64; 3],
    hits: [usize; 3],
}

/// Runs `M(x2 | z^l <- z^l(x1))` for every pair and every layer. Each pair
/// costs two traced passes plus one partial re-evaluation per layer; results
/// are accumulated in (pair, layer) index order.
pub fn sweep_pairs(
    model: &Model,
    vocab: &Vocabulary,
    pairs: &[PatchPair],
    baseline: &TaskBaseline,
) -> Result<SweepResult> {
    if pairs.is_empty() {
        return Err(OrionError::Intervention("no pairs to sweep".into()));
    }
    let n_layers = model.cfg.n_layers;
    let mut sums = vec![LayerSums::default(); n_layers];
    for pair in pairs {
        let label_ids = pair_label_ids(vocab, pair)?;
        let ids1 = vocab.encode_prompt(&pair.x1.prompt_text)?;
        let ids2 = vocab.encode_prompt(&pair.x2.prompt_text)?;
        let t1 = forward_traced(model, &ids1)?;
        let t2 = forward_traced(model, &ids2)?;
        for (l, sum) in sums.iter_mut().enumerate() {
            let logits = resume_from(model, &t2, l, &t1.resid_last[l])?;
            let probs = tensor::softmax_probs_at(&logits, &label_ids);
            let am = tensor::argmax(&logits) as u32;
            for k in 0..3 {
                sum.p[k] += probs[k];
                if am == label_ids[k] {
                    sum.hits[k] += 1;
                }
            }
        }
    }
    let n = pairs.len() as f64;
    let mut layers = Vec::with_capacity(n_layers);
    for (l, sum) in sums.iter().enumerate() {
        let acc = [
            sum.hits[0] as f64 / n,
            sum.hits[1] as f64 / n,
            sum.hits[2] as f64 / n,
        ];
        let entry = SweepLayer {
            layer: l,
            p_r1c1: normalize(sum.p[0] / n, baseline, NormKind::Probability)?,
            p_r1c2: normalize(sum.p[1] / n, baseline, NormKind::Probability)?,
            p_r2c2: normalize(sum.p[2] / n, baseline, NormKind::Probability)?,
            acc_r1c1: acc[0],
            acc_r1c2: acc[1],
            acc_r2c2: acc[2],
            acc_r1c2_norm: normalize(acc[1], baseline, NormKind::Accuracy)?,
        };
        for v in [
            entry.p_r1c1,
            entry.p_r1c2,
            entry.p_r2c2,
            entry.acc_r1c2_norm,
        ] {
            if !v.is_finite() {
                return Err(OrionError::Intervention(format!(
                    "non-finite sweep entry at layer {l}"
                )));
            }
        }
        layers.push(entry);
    }
    Ok(SweepResult { n_pairs: pairs.len(), layers })
}

fn pair_label_ids(vocab: &Vocabulary, pair: &PatchPair) -> Result<[u32; 3]> {
    let id = |tok: &str| {
        vocab
            .token_id(tok)
            .ok_or_else(|| OrionError::Intervention(format!("label {tok:?} is not a single token")))
    };
    Ok([id(&pair.r1c1)?, id(&pair.r1c2)?, id(&pair.r2c2)?])
}

/// Samples pairs and sweeps them; the two stages are exposed separately so a
/// stored pair set can be rescored.
pub fn residual_sweep(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
    baseline: &TaskBaseline,
    n_pairs: usize,
    seed: u64,
) -> Result<SweepResult> {
    let pairs = sample_pairs(dataset, n_pairs, seed)?;
    sweep_pairs(model, vocab, &pairs, baseline)
}

/// The three limit layers read off a sweep.
///
/// `l1` bounds the no-interference region: the deepest layer whose patch
/// still leaves the target answering `R2(C2)`. `l3` bounds the full-override
/// region: the shallowest layer whose patch makes the target answer the
/// source's own `R1(C1)`. Between them, `l2` is where the patched run most
/// strongly answers the source request on the target context, `R1(C2)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LimitLayers {
    pub l1: Option<usize>,
    pub l2: usize,
    pub l3: Option<usize>,
    pub threshold: f64,
}

impl LimitLayers {
    /// Undefined `l1` degenerates to the first layer.
    pub fn l1_or_fallback(&self) -> usize {
        self.l1.unwrap_or(0)
    }

    /// Undefined `l3` degenerates to the last layer.
    pub fn l3_or_fallback(&self, n_layers: usize) -> usize {
        self.l3.unwrap_or(n_layers.saturating_sub(1))
    }
}

pub const DEFAULT_LIMIT_THRESHOLD: f64 = 0.8;

/// `l1` = max layer with normalized `P(R2(C2))` above threshold, `l2` =
/// argmax of normalized `P(R1(C2))` (first layer on ties), `l3` = min layer
/// with normalized `P(R1(C1))` above threshold.
pub fn limit_layers(sweep: &SweepResult, threshold: f64) -> LimitLayers {
    let l1 = sweep
        .layers
        .iter()
        .filter(|e| e.p_r2c2 > threshold)
        .map(|e| e.layer)
        .max();
    let l3 = sweep
        .layers
        .iter()
        .filter(|e| e.p_r1c1 > threshold)
        .map(|e| e.layer)
        .min();
    let mut l2 = 0;
    let mut best = f64::NEG_INFINITY;
    for e in &sweep.layers {
        if e.p_r1c2 > best {
            best = e.p_r1c2;
            l2 = e.layer;
        }
    }
    LimitLayers { l1, l2, l3, threshold }
}

/// Outcome of one request-patching run: the patched argmax and the
/// probabilities of the pair's three labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub predicted_id: u32,
    pub predicted_token: String,
    pub p_r1c1: f64,
    pub p_r1c2: f64,
    pub p_r2c2: f64,
}

/// Last-position logits of `M(target | z^{l2} <- z^{l2}(source))`.
pub fn request_patch_logits(
    model: &Model,
    source: &[u32],
    target: &[u32],
    l2: usize,
) -> Result<Vec<f32>> {
    let t1 = forward_traced(model, source)?;
    let t2 = forward_traced(model, target)?;
    resume_from(model, &t2, l2, &t1.resid_last[l2])
}

/// Patches the source's middle-layer residual into the target and scores the
/// outcome against the pair labels.
pub fn request_patch(
    model: &Model,
    vocab: &Vocabulary,
    x1: &OrionExample,
    x2: &OrionExample,
    l2: usize,
) -> Result<PatchOutcome> {
    let pair = PatchPair::new(x1, x2)?;
    let ids1 = vocab.encode_prompt(&pair.x1.prompt_text)?;
    let ids2 = vocab.encode_prompt(&pair.x2.prompt_text)?;
    let logits = request_patch_logits(model, &ids1, &ids2, l2)?;
    let label_ids = pair_label_ids(vocab, &pair)?;
    let probs = tensor::softmax_probs_at(&logits, &label_ids);
    let predicted_id = tensor::argmax(&logits) as u32;
    let predicted_token = vocab
        .token_of_id(predicted_id)
        .unwrap_or_default()
        .to_string();
    Ok(PatchOutcome {
        predicted_id,
        predicted_token,
        p_r1c1: probs[0],
        p_r1c2: probs[1],
        p_r2c2: probs[2],
    })
}

// ---------------------------------------------------------------------------
// Direct effects via path patching

/// A residual-writing component: one attention head or one MLP block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Head { layer: usize, head: usize },
    Mlp { layer: usize },
}

impl core::fmt::Display for Component {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Component::Head { layer, head } => write!(f, "a{layer}.h{head}"),
            Component::Mlp { layer } => write!(f, "m{layer}"),
        }
    }
}

/// All components of a model in causal order.
pub fn all_components(model: &Model) -> Vec<Component> {
    let mut out = Vec::new();
    for layer in 0..model.cfg.n_layers {
        for head in 0..model.cfg.n_heads {
            out.push(Component::Head { layer, head });
        }
        out.push(Component::Mlp { layer });
    }
    out
}

fn contribution<'a>(trace: &'a ComponentTrace, c: Component) -> &'a [f32] {
    match c {
        Component::Head { layer, head } => &trace.heads_last[layer][head],
        Component::Mlp { layer } => &trace.mlp_last[layer],
    }
}

/// `logit(t) - mean(logit of other requests' answers on x's context)`, the
/// scoring function of the direct-effect analysis, evaluated on given logits.
pub fn metric_from_logits(
    vocab: &Vocabulary,
    requests: &[Request],
    example: &OrionExample,
    logits: &[f32],
    target: &str,
) -> Result<f64> {
    let tid = vocab
        .token_id(target)
        .ok_or_else(|| OrionError::Intervention(format!("target {target:?} is not a single token")))?;
    let alts = metrics::alt_answer_logits(vocab, requests, example, logits)?;
    if alts.is_empty() {
        return Err(OrionError::Intervention(
            "context admits no alternative request".into(),
        ));
    }
    let alt_mean = alts.iter().sum::<f64>() / alts.len() as f64;
    Ok(f64::from(logits[tid as usize]) - alt_mean)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectEffectEntry {
    pub component: Component,
    pub de: f64,
    /// `de / total_effect`; 0 when `|total_effect| <= 1e-9`.
    pub nde: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectEffectReport {
    pub n_corrupted: usize,
    /// Total effect measured by patching the logits node.
    pub total_effect: f64,
    /// Total effect measured by patching every direct path at once; equal to
    /// `total_effect` up to floating-point error.
    pub te_all_paths: f64,
    pub entries: Vec<DirectEffectEntry>,
}

pub const DEFAULT_N_CORRUPTED: usize = 20;
pub const DEFAULT_NDE_THRESHOLD: f64 = 0.03;

/// Indices of dataset examples usable as corrupted inputs for `x`: same task,
/// different request. Drawn without replacement.
pub fn corrupted_pool(
    dataset: &TaskDataset,
    x_index: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let x = dataset
        .examples
        .get(x_index)
        .ok_or_else(|| OrionError::Intervention(format!("no example {x_index}")))?;
    let mut candidates: Vec<usize> = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(j, e)| *j != x_index && e.request != x.request)
        .map(|(j, _)| j)
        .collect();
    if candidates.len() < n {
        return Err(OrionError::Intervention(format!(
            "only {} corrupted candidates for example {x_index}, need {n}",
            candidates.len()
        )));
    }
    let mut r = rng::derive(seed, &format!("corrupted/{x_index}"));
    for k in 0..n {
        let j = k + r.gen_range(0..candidates.len() - k);
        candidates.swap(k, j);
    }
    candidates.truncate(n);
    Ok(candidates)
}

/// Direct and normalized direct effects of every component of the model on
/// one example, against a pool of corrupted inputs.
///
/// The direct path `[c -> logits]` is patched by recomposition: the final
/// residual is the sum of the embedding, every head, every MLP, and the
/// attention output biases, so swapping one component's last-position
/// contribution and re-unembedding changes exactly that component's direct
/// route while every downstream reader keeps its clean input.
pub fn direct_effect_report(
    model: &Model,
    vocab: &Vocabulary,
    requests: &[Request],
    x: &OrionExample,
    corrupted: &[&OrionExample],
    target: &str,
) -> Result<DirectEffectReport> {
    if corrupted.is_empty() {
        return Err(OrionError::Intervention("empty corrupted pool".into()));
    }
    let tid = vocab
        .token_id(target)
        .ok_or_else(|| OrionError::Intervention(format!("target {target:?} is not a single token")))?;
    let mut score_ids = vec![tid];
    score_ids.extend(metrics::alt_answer_ids(vocab, requests, x)?);
    if score_ids.len() < 2 {
        return Err(OrionError::Intervention(
            "context admits no alternative request".into(),
        ));
    }
    // metric over logits restricted to score_ids
    let metric = |vals: &[f32]| -> f64 {
        let alts: f64 = vals[1..].iter().map(|&v| f64::from(v)).sum();
        f64::from(vals[0]) - alts / (vals.len() - 1) as f64
    };

    let ids_x = vocab.encode_prompt(&x.prompt_text)?;
    let ct_x = forward_components(model, &ids_x)?;
    let m_clean = metric(&logits_from_final(model, &ct_x.final_last, Some(&score_ids)));

    let mut ct_cor = Vec::with_capacity(corrupted.len());
    for ex in corrupted {
        let ids = vocab.encode_prompt(&ex.prompt_text)?;
        ct_cor.push(forward_components(model, &ids)?);
    }

    // Total effect, both by overriding the logits node and by replacing every
    // direct path (embedding, heads, MLPs, biases) at once.
    let mut te_sum = 0.0;
    let mut te_paths_sum = 0.0;
    let d = model.cfg.d_model;
    for cor in &ct_cor {
        let restricted: Vec<f32> = score_ids.iter().map(|&id| cor.last_logits[id as usize]).collect();
        te_sum += m_clean - metric(&restricted);

        let mut final_swapped = vec![0.0f32; d];
        for i in 0..d {
            let clean_parts: f32 = ct_x.z0_last[i]
                + ct_x.bo_sum[i]
                + ct_x.heads_last.iter().flatten().map(|h| h[i]).sum::<f32>()
                + ct_x.mlp_last.iter().map(|m| m[i]).sum::<f32>();
            let cor_parts: f32 = cor.z0_last[i]
                + cor.bo_sum[i]
                + cor.heads_last.iter().flatten().map(|h| h[i]).sum::<f32>()
                + cor.mlp_last.iter().map(|m| m[i]).sum::<f32>();
            final_swapped[i] = ct_x.final_last[i] - clean_parts + cor_parts;
        }
        te_paths_sum +=
            m_clean - metric(&logits_from_final(model, &final_swapped, Some(&score_ids)));
    }
    let n = corrupted.len() as f64;
    let total_effect = te_sum / n;
    let te_all_paths = te_paths_sum / n;

    let mut entries = Vec::new();
    let mut patched = vec![0.0f32; d];
    for component in all_components(model) {
        let clean_contrib = contribution(&ct_x, component);
        let mut de_sum = 0.0;
        for cor in &ct_cor {
            let cor_contrib = contribution(cor, component);
            for i in 0..d {
                patched[i] = ct_x.final_last[i] - clean_contrib[i] + cor_contrib[i];
            }
            de_sum += m_clean - metric(&logits_from_final(model, &patched, Some(&score_ids)));
        }
        let de = de_sum / n;
        let nde = if total_effect.abs() > 1e-9 { de / total_effect } else { 0.0 };
        entries.push(DirectEffectEntry { component, de, nde });
    }
    Ok(DirectEffectReport {
        n_corrupted: corrupted.len(),
        total_effect,
        te_all_paths,
        entries,
    })
}

/// Direct effect of a single component; convenience wrapper over the report.
pub fn direct_effect(
    model: &Model,
    vocab: &Vocabulary,
    requests: &[Request],
    component: Component,
    x: &OrionExample,
    corrupted: &[&OrionExample],
    target: &str,
) -> Result<f64> {
    let report = direct_effect_report(model, vocab, requests, x, corrupted, target)?;
    report
        .entries
        .iter()
        .find(|e| e.component == component)
        .map(|e| e.de)
        .ok_or_else(|| OrionError::Intervention(format!("unknown component {component}")))
}

/// Components with normalized direct effect above `threshold`.
pub fn top_components(report: &DirectEffectReport, threshold: f64) -> BTreeSet<Component> {
    report
        .entries
        .iter()
        .filter(|e| e.nde > threshold)
        .map(|e| e.component)
        .collect()
}

/// Mean pairwise Jaccard overlap of the top-component sets of the reports.
/// Pairs involving an empty top set are skipped; it is an error if every
/// pair is.
pub fn top_overlap(reports: &[DirectEffectReport], threshold: f64) -> Result<f64> {
    if reports.len() < 2 {
        return Err(OrionError::Intervention("need at least 2 reports".into()));
    }
    let sets: Vec<BTreeSet<Component>> =
        reports.iter().map(|r| top_components(r, threshold)).collect();
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if sets[i].is_empty() || sets[j].is_empty() {
                continue;
            }
            let inter = sets[i].intersection(&sets[j]).count();
            let union = sets[i].union(&sets[j]).count();
            total += inter as f64 / union as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(OrionError::Intervention(
            "every report pair had an empty top set".into(),
        ));
    }
    Ok(total / counted as f64)
}

// ---------------------------------------------------------------------------
// Attention patching

/// Fixes each listed head's last-position attention row to the source run's
/// pattern over the context columns, renormalizing the full row to sum to
/// one. Context ranges are token spans `[start, end)` and must have equal
/// width on both sides.
pub fn attention_patch(
    model: &Model,
    heads: &[(usize, usize)],
    target: &[u32],
    source: &[u32],
    ctx: (usize, usize),
    src_ctx: (usize, usize),
) -> Result<ForwardOutput> {
    if ctx.1 - ctx.0 != src_ctx.1 - src_ctx.0 {
        return Err(OrionError::Intervention(format!(
            "context ranges differ in width: {ctx:?} vs {src_ctx:?}"
        )));
    }
    let points: Vec<HookPoint> = heads
        .iter()
        .map(|&(layer, head)| HookPoint::AttnPattern { layer, head })
        .collect();
    let src = forward(model, source, &points, &[])?;
    let src_last = source.len() - 1;
    let mut overrides = Vec::with_capacity(heads.len());
    for (&(layer, head), point) in heads.iter().zip(&points) {
        let pattern = src
            .cache
            .get(*point)
            .ok_or_else(|| OrionError::Intervention(format!("pattern {point:?} not captured")))?;
        let row = pattern.row(src_last).to_vec();
        overrides.push(Override::AttnSplice {
            layer,
            head,
            row_pos: Pos::Last,
            ctx,
            src_row: row,
            src_ctx,
        });
    }
    forward(model, target, &[], &overrides)
}

// ---------------------------------------------------------------------------
// Interchange intervention accuracy

/// Raw and normalized IIA with its three per-layer terms: interchange
/// accuracy of `R2(C2)` at `l1`, of `R1(C2)` at `l2`, and of `R1(C1)` at
/// `l3`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub iia_raw: f64,
    pub iia_normalized: f64,
    pub components: [f64; 3],
    pub used_fallback_l1: bool,
    pub used_fallback_l3: bool,
}

/// Reads the three IIA terms off an existing sweep, so the alignment score
/// reuses the patching runs that located the limit layers.
pub fn iia_from_sweep(
    sweep: &SweepResult,
    limits: &LimitLayers,
    baseline: &TaskBaseline,
) -> Result<AlignmentScore> {
    let n_layers = sweep.layers.len();
    if n_layers == 0 {
        return Err(OrionError::Intervention("empty sweep".into()));
    }
    let l1 = limits.l1_or_fallback();
    let l3 = limits.l3_or_fallback(n_layers);
    let layer = |l: usize| -> Result<&SweepLayer> {
        sweep
            .layers
            .get(l)
            .ok_or_else(|| OrionError::Intervention(format!("layer {l} outside sweep")))
    };
    let components = [
        layer(l1)?.acc_r2c2,
        layer(limits.l2)?.acc_r1c2,
        layer(l3)?.acc_r1c1,
    ];
    let iia_raw = components.iter().sum::<f64>() / 3.0;
    let iia_normalized = normalize(iia_raw, baseline, NormKind::Accuracy)?;
    Ok(AlignmentScore {
        iia_raw,
        iia_normalized,
        components,
        used_fallback_l1: limits.l1.is_none(),
        used_fallback_l3: limits.l3.is_none(),
    })
}

/// Sweep, limit layers, and alignment score in one call.
pub fn iia(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &TaskDataset,
    baseline: &TaskBaseline,
    n_pairs: usize,
    seed: u64,
    threshold: f64,
) -> Result<AlignmentScore> {
    let sweep = residual_sweep(model, vocab, dataset, baseline, n_pairs, seed)?;
    let limits = limit_layers(&sweep, threshold);
    iia_from_sweep(&sweep, &limits, baseline)
}
