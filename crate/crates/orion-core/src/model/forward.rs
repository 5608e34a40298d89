//! The forward pass: serial and parallel block evaluation with activation
//! capture, overrides, and incremental re-evaluation for last-position
//! patches.
//!
//! `resume_from` exploits causal masking: an override at the last position
//! cannot influence any earlier position, so a patched run only needs the
//! last-position row of every block above the patch layer plus the clean
//! run's keys and values. The row-level primitives are shared with the full
//! pass, making the two paths bit-identical.

use alloc::vec;
use alloc::vec::Vec;

use super::hooks::{ActivationCache, HookPoint, Override, Pos};
use super::{AttnVariant, Model};
use crate::error::{OrionError, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug)]
pub struct ForwardOutput {
    /// `[seq, vocab]`.
    pub logits: Tensor,
    pub cache: ActivationCache,
}

/// Clean-run state sufficient to re-evaluate the last position under a
/// residual-stream patch at any layer.
pub struct Trace {
    pub seq_len: usize,
    /// Per layer: keys after rotary, `[seq, d_model]`.
    k: Vec<Tensor>,
    /// Per layer: values, `[seq, d_model]`.
    v: Vec<Tensor>,
    /// Per layer `l`: the residual entering block `l` at the last position.
    pub resid_last: Vec<Vec<f32>>,
    /// Final residual (pre final LN) at the last position.
    pub final_last: Vec<f32>,
    pub last_logits: Vec<f32>,
}

/// Last-position additive decomposition of the final residual.
pub struct ComponentTrace {
    pub seq_len: usize,
    /// Embedding-layer output at the last position.
    pub z0_last: Vec<f32>,
    /// `[layer][head]` contribution vectors (bias excluded).
    pub heads_last: Vec<Vec<Vec<f32>>>,
    /// `[layer]` MLP outputs (bias included).
    pub mlp_last: Vec<Vec<f32>>,
    /// Sum of attention output biases over layers.
    pub bo_sum: Vec<f32>,
    pub final_last: Vec<f32>,
    pub last_logits: Vec<f32>,
}

#[derive(Clone)]
enum PatternOv {
    Replace(Tensor),
    Splice { row: usize, ctx: (usize, usize), src_row: Vec<f32>, src_ctx: (usize, usize) },
}

/// Overrides and captures bucketed per layer for O(1) access in the loop.
#[derive(Default)]
struct Plan {
    ov_resid: Vec<Vec<(usize, Vec<f32>)>>,
    ov_pattern: Vec<Vec<(usize, PatternOv)>>,
    ov_head: Vec<Vec<(usize, usize, Vec<f32>)>>,
    ov_mlp: Vec<Vec<(usize, Vec<f32>)>>,
    ov_logits: Vec<(usize, Vec<f32>)>,
    cap_resid: Vec<Vec<usize>>,
    cap_pattern: Vec<Vec<usize>>,
    cap_head: Vec<Vec<(usize, usize)>>,
    cap_mlp: Vec<Vec<usize>>,
    cap_logits: Vec<usize>,
}

impl Plan {
    fn build(model: &Model, seq: usize, capture: &[HookPoint], overrides: &[Override]) -> Result<Self> {
        let cfg = &model.cfg;
        let l = cfg.n_layers;
        let mut plan = Plan {
            ov_resid: vec![Vec::new(); l],
            ov_pattern: vec![Vec::new(); l],
            ov_head: vec![Vec::new(); l],
            ov_mlp: vec![Vec::new(); l],
            cap_resid: vec![Vec::new(); l],
            cap_pattern: vec![Vec::new(); l],
            cap_head: vec![Vec::new(); l],
            cap_mlp: vec![Vec::new(); l],
            ..Plan::default()
        };
        let mut seen = alloc::collections::BTreeSet::new();
        for ov in overrides {
            let dedup = ov.point_for_dedup().resolve(cfg.n_layers, cfg.n_heads, seq)?;
            if !seen.insert(dedup) {
                return Err(OrionError::Hook(alloc::format!("duplicate override at {dedup:?}")));
            }
            match ov {
                Override::Replace { point, value } => {
                    let point = point.resolve(cfg.n_layers, cfg.n_heads, seq)?;
                    let shape_err = |want: &[usize]| {
                        Err(OrionError::Hook(alloc::format!(
                            "override at {point:?}: value shape {:?} != expected {want:?}",
                            value.shape
                        )))
                    };
                    match point {
                        HookPoint::ResidPost { layer, pos: Pos::Abs(p) } => {
                            if value.shape != [cfg.d_model] {
                                return shape_err(&[cfg.d_model]);
                            }
                            plan.ov_resid[layer].push((p, value.data.clone()));
                        }
                        HookPoint::AttnPattern { layer, head } => {
                            if value.shape != [seq, seq] {
                                return shape_err(&[seq, seq]);
                            }
                            plan.ov_pattern[layer].push((head, PatternOv::Replace(value.clone())));
                        }
                        HookPoint::HeadOut { layer, head, pos: Pos::Abs(p) } => {
                            if value.shape != [cfg.d_model] {
                                return shape_err(&[cfg.d_model]);
                            }
                            plan.ov_head[layer].push((head, p, value.data.clone()));
                        }
                        HookPoint::MlpOut { layer, pos: Pos::Abs(p) } => {
                            if value.shape != [cfg.d_model] {
                                return shape_err(&[cfg.d_model]);
                            }
                            plan.ov_mlp[layer].push((p, value.data.clone()));
                        }
                        HookPoint::Logits { pos: Pos::Abs(p) } => {
                            if value.shape != [cfg.vocab_size] {
                                return shape_err(&[cfg.vocab_size]);
                            }
                            plan.ov_logits.push((p, value.data.clone()));
                        }
                        _ => unreachable!("resolve() normalizes positions"),
                    }
                }
                Override::AttnSplice { layer, head, row_pos, ctx, src_row, src_ctx } => {
                    if *layer >= cfg.n_layers || *head >= cfg.n_heads {
                        return Err(OrionError::Hook(alloc::format!(
                            "splice target layer {layer} head {head} out of range"
                        )));
                    }
                    let row = row_pos.resolve(seq)?;
                    if ctx.0 > ctx.1 || ctx.1 > row + 1 {
                        return Err(OrionError::Hook(alloc::format!(
                            "splice context {ctx:?} must lie in the causal range of row {row}"
                        )));
                    }
                    if src_ctx.0 > src_ctx.1 || src_ctx.1 > src_row.len() {
                        return Err(OrionError::Hook(alloc::format!(
                            "splice source context {src_ctx:?} outside source row of {}",
                            src_row.len()
                        )));
                    }
                    if ctx.1 - ctx.0 != src_ctx.1 - src_ctx.0 {
                        return Err(OrionError::Hook(
                            "splice context ranges must have equal width".into(),
                        ));
                    }
                    plan.ov_pattern[*layer].push((
                        *head,
                        PatternOv::Splice {
                            row,
                            ctx: *ctx,
                            src_row: src_row.clone(),
                            src_ctx: *src_ctx,
                        },
                    ));
                }
            }
        }
        for point in capture {
            match point.resolve(cfg.n_layers, cfg.n_heads, seq)? {
                HookPoint::ResidPost { layer, pos: Pos::Abs(p) } => plan.cap_resid[layer].push(p),
                HookPoint::AttnPattern { layer, head } => plan.cap_pattern[layer].push(head),
                HookPoint::HeadOut { layer, head, pos: Pos::Abs(p) } => {
                    plan.cap_head[layer].push((head, p))
                }
                HookPoint::MlpOut { layer, pos: Pos::Abs(p) } => plan.cap_mlp[layer].push(p),
                HookPoint::Logits { pos: Pos::Abs(p) } => plan.cap_logits.push(p),
                _ => unreachable!(),
            }
        }
        Ok(plan)
    }
}

fn check_tokens(model: &Model, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(OrionError::Hook("empty token sequence".into()));
    }
    if tokens.len() > model.cfg.max_seq_len {
        return Err(OrionError::Hook(alloc::format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            model.cfg.max_seq_len
        )));
    }
    if let Some(bad) = tokens.iter().find(|&&t| (t as usize) >= model.cfg.vocab_size) {
        return Err(OrionError::Hook(alloc::format!(
            "token id {bad} outside vocab_size {}",
            model.cfg.vocab_size
        )));
    }
    Ok(())
}

#[inline]
fn head_range(head: usize, dh: usize) -> core::ops::Range<usize> {
    head * dh..(head + 1) * dh
}

#[inline]
fn axpy(acc: &mut [f32], w: f32, x: &[f32]) {
    for (a, b) in acc.iter_mut().zip(x.iter()) {
        *a += w * *b;
    }
}

/// One head's contribution to the residual: OV-mixed vector through the
/// head's rows of `W_O` (stored transposed), bias excluded.
fn project_head(mix: &[f32], wo_t: &Tensor, head: usize, dh: usize, out: &mut [f32]) {
    let r = head_range(head, dh);
    for (j, o) in out.iter_mut().enumerate() {
        *o = tensor::dot(mix, &wo_t.row(j)[r.clone()]);
    }
}

fn rotate_row(inv_freq: &[f32], rot_dims: usize, n_heads: usize, dh: usize, row: &mut [f32], pos: usize) {
    let half = rot_dims / 2;
    for h in 0..n_heads {
        let s = &mut row[head_range(h, dh)];
        for j in 0..half {
            let angle = pos as f32 * inv_freq[j];
            let (sin, cos) = (libm::sinf(angle), libm::cosf(angle));
            let (x1, x2) = (s[j], s[j + half]);
            s[j] = x1 * cos - x2 * sin;
            s[j + half] = x2 * cos + x1 * sin;
        }
    }
}

fn mlp_row(model: &Model, block: usize, x_ln: &[f32], h_buf: &mut [f32], out: &mut [f32]) {
    let b = &model.blocks[block];
    tensor::linear_t(x_ln, 1, model.cfg.d_model, &b.win_t.data, Some(&b.bin), model.cfg.d_mlp, h_buf);
    for v in h_buf.iter_mut() {
        *v = model.cfg.gelu(*v);
    }
    tensor::linear_t(h_buf, 1, model.cfg.d_mlp, &b.wout_t.data, Some(&b.bout), model.cfg.d_model, out);
}

fn unembed_row(model: &Model, final_resid: &[f32]) -> Vec<f32> {
    let d = model.cfg.d_model;
    let mut ln = vec![0.0f32; d];
    tensor::layernorm_row(final_resid, model.cfg.ln_eps, &model.ln_f.scale, &model.ln_f.bias, &mut ln);
    let mut logits = vec![0.0f32; model.cfg.vocab_size];
    tensor::linear_t(&ln, 1, d, &model.w_u_t.data, None, model.cfg.vocab_size, &mut logits);
    logits
}

/// Final LN + unembedding of a last-position residual, restricted to `ids`
/// when given (direct-effect scoring touches only a handful of logits).
pub fn logits_from_final(model: &Model, final_resid: &[f32], ids: Option<&[u32]>) -> Vec<f32> {
    match ids {
        None => unembed_row(model, final_resid),
        Some(ids) => {
            let d = model.cfg.d_model;
            let mut ln = vec![0.0f32; d];
            tensor::layernorm_row(final_resid, model.cfg.ln_eps, &model.ln_f.scale, &model.ln_f.bias, &mut ln);
            ids.iter().map(|&id| tensor::dot(&ln, model.w_u_t.row(id as usize))).collect()
        }
    }
}

struct RunOut {
    logits: Tensor,
    cache: ActivationCache,
    trace: Option<Trace>,
    components: Option<ComponentTrace>,
}

fn run(
    model: &Model,
    tokens: &[u32],
    capture: &[HookPoint],
    overrides: &[Override],
    want_full_logits: bool,
    want_trace: bool,
    want_components: bool,
) -> Result<RunOut> {
    check_tokens(model, tokens)?;
    let cfg = &model.cfg;
    let (seq, d, dh, nh) = (tokens.len(), cfg.d_model, cfg.head_dim(), cfg.n_heads);
    let last = seq - 1;
    let plan = Plan::build(model, seq, capture, overrides)?;
    let mut cache = ActivationCache::new(seq);

    // Embedding: token rows plus learned positions for the serial variant.
    let mut resid = Tensor::zeros(vec![seq, d]);
    for p in 0..seq {
        let row = resid.row_mut(p);
        row.copy_from_slice(model.w_e.row(tokens[p] as usize));
        if let Some(wp) = &model.w_p {
            tensor::add_assign(row, wp.row(p));
        }
    }

    let mut trace = want_trace.then(|| Trace {
        seq_len: seq,
        k: Vec::with_capacity(cfg.n_layers),
        v: Vec::with_capacity(cfg.n_layers),
        resid_last: Vec::with_capacity(cfg.n_layers),
        final_last: Vec::new(),
        last_logits: Vec::new(),
    });
    let mut components = want_components.then(|| ComponentTrace {
        seq_len: seq,
        z0_last: Vec::new(),
        heads_last: Vec::with_capacity(cfg.n_layers),
        mlp_last: Vec::with_capacity(cfg.n_layers),
        bo_sum: vec![0.0; d],
        final_last: Vec::new(),
        last_logits: Vec::new(),
    });

    let inv_scale = 1.0 / libm::sqrtf(dh as f32);
    let mut q = Tensor::zeros(vec![seq, d]);
    let mut k = Tensor::zeros(vec![seq, d]);
    let mut v = Tensor::zeros(vec![seq, d]);
    let mut x_ln = Tensor::zeros(vec![seq, d]);
    let mut h_buf = vec![0.0f32; cfg.d_mlp];

    for l in 0..cfg.n_layers {
        // resid here is resid_post(l): the stream entering block l.
        for (p, value) in &plan.ov_resid[l] {
            resid.row_mut(*p).copy_from_slice(value);
        }
        for p in &plan.cap_resid[l] {
            cache.insert(
                HookPoint::ResidPost { layer: l, pos: Pos::Abs(*p) },
                Tensor { shape: vec![d], data: resid.row(*p).to_vec() },
            );
        }
        if let Some(t) = trace.as_mut() {
            t.resid_last.push(resid.row(last).to_vec());
        }
        if l == 0 {
            if let Some(c) = components.as_mut() {
                c.z0_last = resid.row(last).to_vec();
            }
        }

        let block = &model.blocks[l];

        // Attention input.
        for p in 0..seq {
            tensor::layernorm_row(resid.row(p), cfg.ln_eps, &block.ln1.scale, &block.ln1.bias, x_ln.row_mut(p));
        }
        tensor::linear_t(&x_ln.data, seq, d, &block.wq_t.data, Some(&block.bq), d, &mut q.data);
        tensor::linear_t(&x_ln.data, seq, d, &block.wk_t.data, Some(&block.bk), d, &mut k.data);
        tensor::linear_t(&x_ln.data, seq, d, &block.wv_t.data, Some(&block.bv), d, &mut v.data);
        if let Some(rc) = &cfg.rotary {
            for p in 0..seq {
                rotate_row(&model.rot_inv_freq, rc.rot_dims, nh, dh, q.row_mut(p), p);
                rotate_row(&model.rot_inv_freq, rc.rot_dims, nh, dh, k.row_mut(p), p);
            }
        }

        let mut attn_out = Tensor::zeros(vec![seq, d]);
        let mut head_components: Vec<Vec<f32>> = Vec::new();
        for head in 0..nh {
            let hr = head_range(head, dh);
            let mut pattern = Tensor::zeros(vec![seq, seq]);
            for a in 0..seq {
                let qa = &q.row(a)[hr.clone()];
                let row = pattern.row_mut(a);
                for b in 0..=a {
                    row[b] = tensor::dot(qa, &k.row(b)[hr.clone()]) * inv_scale;
                }
                tensor::softmax_row(&mut row[..=a]);
            }
            // Pattern hooks: overrides first, then capture of the effective
            // pattern every downstream consumer reads.
            let mut replaced = false;
            for (h, ov) in &plan.ov_pattern[l] {
                if *h != head {
                    continue;
                }
                match ov {
                    PatternOv::Replace(t) => {
                        pattern = t.clone();
                        replaced = true;
                    }
                    PatternOv::Splice { row, ctx, src_row, src_ctx } => {
                        let r = pattern.row_mut(*row);
                        r[ctx.0..ctx.1].copy_from_slice(&src_row[src_ctx.0..src_ctx.1]);
                        let total: f32 = r.iter().sum();
                        if total > 0.0 {
                            let inv = 1.0 / total;
                            for x in r.iter_mut() {
                                *x *= inv;
                            }
                        }
                    }
                }
            }
            if plan.cap_pattern[l].contains(&head) {
                cache.insert(HookPoint::AttnPattern { layer: l, head }, pattern.clone());
            }

            let mut mix = vec![0.0f32; dh];
            let mut contrib = vec![0.0f32; d];
            for a in 0..seq {
                mix.iter_mut().for_each(|m| *m = 0.0);
                // Replaced patterns may place mass anywhere; clean and
                // spliced rows stay causal.
                let limit = if replaced { seq } else { a + 1 };
                let prow = pattern.row(a);
                for b in 0..limit {
                    axpy(&mut mix, prow[b], &v.row(b)[hr.clone()]);
                }
                project_head(&mix, &block.wo_t, head, dh, &mut contrib);
                for (h, p, value) in &plan.ov_head[l] {
                    if *h == head && *p == a {
                        contrib.copy_from_slice(value);
                    }
                }
                if plan.cap_head[l].contains(&(head, a)) {
                    cache.insert(
                        HookPoint::HeadOut { layer: l, head, pos: Pos::Abs(a) },
                        Tensor { shape: vec![d], data: contrib.clone() },
                    );
                }
                if a == last {
                    if components.is_some() {
                        head_components.push(contrib.clone());
                    }
                }
                tensor::add_assign(attn_out.row_mut(a), &contrib);
            }
        }
        for a in 0..seq {
            tensor::add_assign(attn_out.row_mut(a), &block.bo);
        }
        if let Some(c) = components.as_mut() {
            c.heads_last.push(head_components);
            tensor::add_assign(&mut c.bo_sum, &block.bo);
        }
        if let Some(t) = trace.as_mut() {
            t.k.push(k.clone());
            t.v.push(v.clone());
        }

        // MLP input depends on the variant; the serial path folds the
        // attention update in first.
        match cfg.attn_variant {
            AttnVariant::Serial => {
                for p in 0..seq {
                    tensor::add_assign(resid.row_mut(p), attn_out.row(p));
                }
                for p in 0..seq {
                    tensor::layernorm_row(resid.row(p), cfg.ln_eps, &block.ln2.scale, &block.ln2.bias, x_ln.row_mut(p));
                }
            }
            AttnVariant::Parallel => {
                for p in 0..seq {
                    tensor::layernorm_row(resid.row(p), cfg.ln_eps, &block.ln2.scale, &block.ln2.bias, x_ln.row_mut(p));
                }
            }
        }
        let mut mlp_out = vec![0.0f32; d];
        for p in 0..seq {
            mlp_row(model, l, x_ln.row(p), &mut h_buf, &mut mlp_out);
            for (op, value) in &plan.ov_mlp[l] {
                if *op == p {
                    mlp_out.copy_from_slice(value);
                }
            }
            if plan.cap_mlp[l].contains(&p) {
                cache.insert(
                    HookPoint::MlpOut { layer: l, pos: Pos::Abs(p) },
                    Tensor { shape: vec![d], data: mlp_out.clone() },
                );
            }
            if p == last {
                if let Some(c) = components.as_mut() {
                    c.mlp_last.push(mlp_out.clone());
                }
            }
            match cfg.attn_variant {
                AttnVariant::Serial => tensor::add_assign(resid.row_mut(p), &mlp_out),
                AttnVariant::Parallel => {
                    tensor::add_assign(resid.row_mut(p), attn_out.row(p));
                    tensor::add_assign(resid.row_mut(p), &mlp_out);
                }
            }
        }
    }

    if let Some(t) = trace.as_mut() {
        t.final_last = resid.row(last).to_vec();
    }
    if let Some(c) = components.as_mut() {
        c.final_last = resid.row(last).to_vec();
    }

    let mut logits = if want_full_logits {
        let mut out = Tensor::zeros(vec![seq, cfg.vocab_size]);
        for p in 0..seq {
            out.row_mut(p).copy_from_slice(&unembed_row(model, resid.row(p)));
        }
        out
    } else {
        debug_assert!(plan.ov_logits.is_empty() && plan.cap_logits.is_empty());
        let row = unembed_row(model, resid.row(last));
        Tensor { shape: vec![1, cfg.vocab_size], data: row }
    };
    if want_full_logits {
        for (p, value) in &plan.ov_logits {
            logits.row_mut(*p).copy_from_slice(value);
        }
        for p in &plan.cap_logits {
            cache.insert(
                HookPoint::Logits { pos: Pos::Abs(*p) },
                Tensor { shape: vec![cfg.vocab_size], data: logits.row(*p).to_vec() },
            );
        }
    }

    let last_row = logits.row(logits.shape[0] - 1).to_vec();
    if let Some(t) = trace.as_mut() {
        t.last_logits = last_row.clone();
    }
    if let Some(c) = components.as_mut() {
        c.last_logits = last_row;
    }
    Ok(RunOut { logits, cache, trace, components })
}

/// Full forward pass: logits over all positions plus requested captures,
/// with overrides applied before any downstream consumer reads them.
pub fn forward(
    model: &Model,
    tokens: &[u32],
    capture: &[HookPoint],
    overrides: &[Override],
) -> Result<ForwardOutput> {
    let out = run(model, tokens, capture, overrides, true, false, false)?;
    Ok(ForwardOutput { logits: out.logits, cache: out.cache })
}

/// Clean pass recording everything needed to re-evaluate last-position
/// residual patches cheaply.
pub fn forward_traced(model: &Model, tokens: &[u32]) -> Result<Trace> {
    let out = run(model, tokens, &[], &[], false, true, false)?;
    Ok(out.trace.expect("trace requested"))
}

/// Clean pass recording the additive component decomposition at the last
/// position.
pub fn forward_components(model: &Model, tokens: &[u32]) -> Result<ComponentTrace> {
    let out = run(model, tokens, &[], &[], false, false, true)?;
    Ok(out.components.expect("components requested"))
}

/// Last-position logits of the patched run `resid_post(layer)[last] <-
/// value` on the traced input. Bit-identical to a full `forward` with the
/// same override.
pub fn resume_from(model: &Model, trace: &Trace, layer: usize, value: &[f32]) -> Result<Vec<f32>> {
    let cfg = &model.cfg;
    let (d, dh, nh, seq) = (cfg.d_model, cfg.head_dim(), cfg.n_heads, trace.seq_len);
    if layer >= cfg.n_layers {
        return Err(OrionError::Hook(alloc::format!(
            "layer {layer} out of range (n_layers {})",
            cfg.n_layers
        )));
    }
    if value.len() != d {
        return Err(OrionError::Hook(alloc::format!(
            "resume value has {} dims, want {d}",
            value.len()
        )));
    }
    let last = seq - 1;
    let inv_scale = 1.0 / libm::sqrtf(dh as f32);

    let mut r = value.to_vec();
    let mut x1 = vec![0.0f32; d];
    let mut x2 = vec![0.0f32; d];
    let mut qrow = vec![0.0f32; d];
    let mut krow = vec![0.0f32; d];
    let mut vrow = vec![0.0f32; d];
    let mut h_buf = vec![0.0f32; cfg.d_mlp];
    let mut mlp_out = vec![0.0f32; d];
    let mut scores = vec![0.0f32; seq];

    for l in layer..cfg.n_layers {
        let block = &model.blocks[l];
        tensor::layernorm_row(&r, cfg.ln_eps, &block.ln1.scale, &block.ln1.bias, &mut x1);
        tensor::linear_t(&x1, 1, d, &block.wq_t.data, Some(&block.bq), d, &mut qrow);
        tensor::linear_t(&x1, 1, d, &block.wk_t.data, Some(&block.bk), d, &mut krow);
        tensor::linear_t(&x1, 1, d, &block.wv_t.data, Some(&block.bv), d, &mut vrow);
        if let Some(rc) = &cfg.rotary {
            rotate_row(&model.rot_inv_freq, rc.rot_dims, nh, dh, &mut qrow, last);
            rotate_row(&model.rot_inv_freq, rc.rot_dims, nh, dh, &mut krow, last);
        }

        let mut attn_out = vec![0.0f32; d];
        let mut mix = vec![0.0f32; dh];
        let mut contrib = vec![0.0f32; d];
        for head in 0..nh {
            let hr = head_range(head, dh);
            let qa = &qrow[hr.clone()];
            for b in 0..last {
                scores[b] = tensor::dot(qa, &trace.k[l].row(b)[hr.clone()]) * inv_scale;
            }
            scores[last] = tensor::dot(qa, &krow[hr.clone()]) * inv_scale;
            tensor::softmax_row(&mut scores[..=last]);
            mix.iter_mut().for_each(|m| *m = 0.0);
            for b in 0..last {
                axpy(&mut mix, scores[b], &trace.v[l].row(b)[hr.clone()]);
            }
            axpy(&mut mix, scores[last], &vrow[hr.clone()]);
            project_head(&mix, &block.wo_t, head, dh, &mut contrib);
            tensor::add_assign(&mut attn_out, &contrib);
        }
        tensor::add_assign(&mut attn_out, &block.bo);

        match cfg.attn_variant {
            AttnVariant::Serial => {
                tensor::add_assign(&mut r, &attn_out);
                tensor::layernorm_row(&r, cfg.ln_eps, &block.ln2.scale, &block.ln2.bias, &mut x2);
                mlp_row(model, l, &x2, &mut h_buf, &mut mlp_out);
                tensor::add_assign(&mut r, &mlp_out);
            }
            AttnVariant::Parallel => {
                tensor::layernorm_row(&r, cfg.ln_eps, &block.ln2.scale, &block.ln2.bias, &mut x2);
                mlp_row(model, l, &x2, &mut h_buf, &mut mlp_out);
                tensor::add_assign(&mut r, &attn_out);
                tensor::add_assign(&mut r, &mlp_out);
            }
        }
    }
    Ok(unembed_row(model, &r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_cfg;
    use crate::model::{AttnVariant, Model};

    fn toks() -> Vec<u32> {
        vec![3, 1, 4, 1, 5, 9, 2, 6]
    }

    fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn forward_is_bit_deterministic() {
        for variant in [AttnVariant::Serial, AttnVariant::Parallel] {
            let m = Model::random(tiny_cfg(variant, 3), 11).unwrap();
            let a = forward(&m, &toks(), &[], &[]).unwrap();
            let b = forward(&m, &toks(), &[], &[]).unwrap();
            assert_eq!(a.logits.data, b.logits.data, "{variant:?}");
        }
    }

    #[test]
    fn capture_is_transparent() {
        let m = Model::random(tiny_cfg(AttnVariant::Serial, 3), 13).unwrap();
        let plain = forward(&m, &toks(), &[], &[]).unwrap();
        let capture = vec![
            HookPoint::ResidPost { layer: 1, pos: Pos::Last },
            HookPoint::AttnPattern { layer: 2, head: 1 },
            HookPoint::HeadOut { layer: 0, head: 0, pos: Pos::Abs(3) },
            HookPoint::MlpOut { layer: 2, pos: Pos::Last },
            HookPoint::Logits { pos: Pos::Last },
        ];
        let hooked = forward(&m, &toks(), &capture, &[]).unwrap();
        assert_eq!(plain.logits.data, hooked.logits.data, "capture must not change logits");
        assert_eq!(hooked.cache.len(), capture.len());
    }

    #[test]
    fn serial_and_parallel_disagree() {
        let serial = Model::random(tiny_cfg(AttnVariant::Serial, 2), 7).unwrap();
        // Same seed, same shapes except W_P; copy the serial weights into a
        // parallel config to isolate the wiring difference.
        let mut named: alloc::collections::BTreeMap<_, _> =
            serial.to_named().into_iter().collect();
        named.remove("embed.W_P");
        let parallel = Model::from_named(tiny_cfg(AttnVariant::Parallel, 2), named).unwrap();
        let a = forward(&serial, &toks(), &[], &[]).unwrap();
        let b = forward(&parallel, &toks(), &[], &[]).unwrap();
        assert!(
            max_abs_diff(a.logits.row(7), b.logits.row(7)) > 1e-4,
            "variants should wire differently"
        );
    }

    #[test]
    fn attn_pattern_rows_are_stochastic_and_causal() {
        let m = Model::random(tiny_cfg(AttnVariant::Parallel, 2), 17).unwrap();
        let capture: Vec<HookPoint> =
            (0..2).map(|h| HookPoint::AttnPattern { layer: 1, head: h }).collect();
        let out = forward(&m, &toks(), &capture, &[]).unwrap();
        for (_, pat) in out.cache.iter() {
            for a in 0..8 {
                let row = pat.row(a);
                let sum: f32 = row[..=a].iter().sum();
                assert!((sum - 1.0).abs() < 1e-5, "row {a} sums to {sum}");
                assert!(row[a + 1..].iter().all(|&x| x == 0.0), "future mass in row {a}");
            }
        }
    }

    #[test]
    fn resume_matches_forward_with_override_bitwise() {
        for variant in [AttnVariant::Serial, AttnVariant::Parallel] {
            let m = Model::random(tiny_cfg(variant, 3), 23).unwrap();
            let trace = forward_traced(&m, &toks()).unwrap();
            let mut rng = crate::rng::seeded(99);
            for layer in 0..3 {
                let value: Vec<f32> =
                    (0..8).map(|_| crate::rng::normal(&mut rng, 0.0, 1.0)).collect();
                let fast = resume_from(&m, &trace, layer, &value).unwrap();
                let slow = forward(
                    &m,
                    &toks(),
                    &[],
                    &[Override::Replace {
                        point: HookPoint::ResidPost { layer, pos: Pos::Last },
                        value: Tensor { shape: vec![8], data: value.clone() },
                    }],
                )
                .unwrap();
                assert_eq!(fast, slow.logits.row(7), "{variant:?} layer {layer}");
            }
        }
    }

    #[test]
    fn trace_layer_zero_is_embedding_output() {
        let m = Model::random(tiny_cfg(AttnVariant::Serial, 2), 31).unwrap();
        let trace = forward_traced(&m, &toks()).unwrap();
        let toks = toks();
        let mut want = m.w_e.row(toks[7] as usize).to_vec();
        tensor::add_assign(&mut want, m.w_p.as_ref().unwrap().row(7));
        assert_eq!(trace.resid_last[0], want);
    }

    #[test]
    fn component_decomposition_reconstructs_final_residual() {
        for variant in [AttnVariant::Serial, AttnVariant::Parallel] {
            let m = Model::random(tiny_cfg(variant, 3), 41).unwrap();
            let c = forward_components(&m, &toks()).unwrap();
            let mut rebuilt = c.z0_last.clone();
            tensor::add_assign(&mut rebuilt, &c.bo_sum);
            for l in 0..3 {
                for h in &c.heads_last[l] {
                    tensor::add_assign(&mut rebuilt, h);
                }
                tensor::add_assign(&mut rebuilt, &c.mlp_last[l]);
            }
            assert!(
                max_abs_diff(&rebuilt, &c.final_last) < 1e-4,
                "{variant:?}: additive decomposition must recompose"
            );
        }
    }

    #[test]
    fn logits_from_final_agrees_with_forward() {
        let m = Model::random(tiny_cfg(AttnVariant::Serial, 2), 43).unwrap();
        let c = forward_components(&m, &toks()).unwrap();
        let full = logits_from_final(&m, &c.final_last, None);
        assert_eq!(full, c.last_logits);
        let some = logits_from_final(&m, &c.final_last, Some(&[2, 5]));
        assert_eq!(some, vec![full[2], full[5]]);
    }

    #[test]
    fn duplicate_overrides_rejected() {
        let m = Model::random(tiny_cfg(AttnVariant::Serial, 2), 47).unwrap();
        let ov = Override::Replace {
            point: HookPoint::MlpOut { layer: 0, pos: Pos::Last },
            value: Tensor::zeros(vec![8]),
        };
        let err = forward(&m, &toks(), &[], &[ov.clone(), ov]).unwrap_err();
        assert!(alloc::format!("{err}").contains("duplicate"));
    }

    #[test]
    fn splice_renormalizes_row() {
        let m = Model::random(tiny_cfg(AttnVariant::Parallel, 2), 53).unwrap();
        let src_row = vec![0.5, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0];
        let ov = Override::AttnSplice {
            layer: 1,
            head: 0,
            row_pos: Pos::Last,
            ctx: (1, 4),
            src_row,
            src_ctx: (0, 3),
        };
        let cap = [HookPoint::AttnPattern { layer: 1, head: 0 }];
        let out = forward(&m, &toks(), &cap, &[ov]).unwrap();
        let pat = out.cache.get(HookPoint::AttnPattern { layer: 1, head: 0 }).unwrap();
        let row = pat.row(7);
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "spliced row sums to {sum}");
        // Spliced columns keep the source's internal proportions.
        assert!((row[1] / row[2] - 2.0).abs() < 1e-4);
    }
}
