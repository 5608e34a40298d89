//! Model configuration and weights.
//!
//! Weights travel between tools in a flat named-tensor container; the
//! canonical names and shapes are fixed by [`expected_shapes`]. At
//! construction every projection matrix is transposed into a rows-as-outputs
//! layout so the forward pass runs on contiguous dot products.

mod forward;
mod hooks;

pub use forward::{
    forward, forward_components, forward_traced, logits_from_final, resume_from, ComponentTrace,
    ForwardOutput, Trace,
};
pub use hooks::{ActivationCache, HookPoint, Override, Pos};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnVariant {
    /// GPT-2 style: the MLP reads the residual after the attention update.
    Serial,
    /// GPT-NeoX style: attention and MLP both read the block input.
    Parallel,
}

/// Rotary position encoding parameters (parallel variant only). `rot_dims`
/// is the number of leading head dims rotated; the rest pass through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotaryConfig {
    pub rot_dims: usize,
    pub base: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    /// Embedding-matrix row count. May exceed the tokenizer's vocab size
    /// (padded checkpoints).
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub attn_variant: AttnVariant,
    pub ln_eps: f32,
    /// Present iff `attn_variant` is parallel; serial models use learned
    /// absolute positions instead.
    #[serde(default)]
    pub rotary: Option<RotaryConfig>,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(OrionError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_mlp == 0 {
            return fail("layer, head and width counts must be positive".to_string());
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return fail("vocab_size and max_seq_len must be positive".to_string());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(alloc::format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model,
                self.n_heads
            ));
        }
        if !(self.ln_eps > 0.0) {
            return fail("ln_eps must be positive".to_string());
        }
        match (self.attn_variant, &self.rotary) {
            (AttnVariant::Serial, Some(_)) => {
                fail("serial variant uses learned positions; rotary must be absent".to_string())
            }
            (AttnVariant::Parallel, None) => {
                fail("parallel variant requires rotary config".to_string())
            }
            (AttnVariant::Parallel, Some(r)) => {
                if r.rot_dims == 0 || r.rot_dims % 2 != 0 || r.rot_dims > self.head_dim() {
                    fail(alloc::format!(
                        "rot_dims {} must be even and in (0, head_dim {}]",
                        r.rot_dims,
                        self.head_dim()
                    ))
                } else if !(r.base > 0.0) {
                    fail("rotary base must be positive".to_string())
                } else {
                    Ok(())
                }
            }
            (AttnVariant::Serial, None) => Ok(()),
        }
    }

    /// Activation follows the architecture family: tanh-approximate GELU for
    /// serial (GPT-2), exact erf GELU for parallel (GPT-NeoX).
    #[inline]
    pub fn gelu(&self, x: f32) -> f32 {
        match self.attn_variant {
            AttnVariant::Serial => crate::tensor::gelu_tanh(x),
            AttnVariant::Parallel => crate::tensor::gelu_erf(x),
        }
    }
}

/// Canonical container entries for a config: `(name, shape)` with matrices
/// in `[in, out]` orientation.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![("embed.W_E".to_string(), vec![cfg.vocab_size, d])];
    if cfg.attn_variant == AttnVariant::Serial {
        out.push(("embed.W_P".to_string(), vec![cfg.max_seq_len, d]));
    }
    for l in 0..cfg.n_layers {
        let p = |s: &str| alloc::format!("block.{l}.{s}");
        out.push((p("ln1.scale"), vec![d]));
        out.push((p("ln1.bias"), vec![d]));
        out.push((p("ln2.scale"), vec![d]));
        out.push((p("ln2.bias"), vec![d]));
        for w in ["W_Q", "W_K", "W_V", "W_O"] {
            out.push((p(&alloc::format!("attn.{w}")), vec![d, d]));
        }
        for b in ["b_Q", "b_K", "b_V", "b_O"] {
            out.push((p(&alloc::format!("attn.{b}")), vec![d]));
        }
        out.push((p("mlp.W_in"), vec![d, cfg.d_mlp]));
        out.push((p("mlp.b_in"), vec![cfg.d_mlp]));
        out.push((p("mlp.W_out"), vec![cfg.d_mlp, d]));
        out.push((p("mlp.b_out"), vec![d]));
    }
    out.push(("final_ln.scale".to_string(), vec![d]));
    out.push(("final_ln.bias".to_string(), vec![d]));
    out.push(("unembed.W_U".to_string(), vec![d, cfg.vocab_size]));
    out
}

#[derive(Clone, Debug)]
pub struct LnWeights {
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Per-block weights with projections stored transposed (`*_t` fields are
/// `[n_out, n_in]`).
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LnWeights,
    pub ln2: LnWeights,
    pub wq_t: Tensor,
    pub bq: Vec<f32>,
    pub wk_t: Tensor,
    pub bk: Vec<f32>,
    pub wv_t: Tensor,
    pub bv: Vec<f32>,
    pub wo_t: Tensor,
    pub bo: Vec<f32>,
    pub win_t: Tensor,
    pub bin: Vec<f32>,
    pub wout_t: Tensor,
    pub bout: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub w_e: Tensor,
    pub w_p: Option<Tensor>,
    pub blocks: Vec<Block>,
    pub ln_f: LnWeights,
    /// Unembedding stored transposed: `[vocab, d]`.
    pub w_u_t: Tensor,
    /// Rotary inverse frequencies, empty for serial models.
    pub rot_inv_freq: Vec<f32>,
}

impl Model {
    /// Assemble from canonically named tensors, validating names and shapes
    /// strictly in both directions.
    pub fn from_named(cfg: ModelConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = named
                .remove(name)
                .ok_or_else(|| OrionError::Weights(alloc::format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(OrionError::Weights(alloc::format!(
                    "tensor {name}: shape {:?} != expected {:?}",
                    t.shape,
                    shape
                )));
            }
            Ok(t)
        };

        let d = cfg.d_model;
        let w_e = take("embed.W_E", &[cfg.vocab_size, d])?;
        let w_p = if cfg.attn_variant == AttnVariant::Serial {
            Some(take("embed.W_P", &[cfg.max_seq_len, d])?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| alloc::format!("block.{l}.{s}");
            blocks.push(Block {
                ln1: LnWeights {
                    scale: take(&p("ln1.scale"), &[d])?.data,
                    bias: take(&p("ln1.bias"), &[d])?.data,
                },
                ln2: LnWeights {
                    scale: take(&p("ln2.scale"), &[d])?.data,
                    bias: take(&p("ln2.bias"), &[d])?.data,
                },
                wq_t: take(&p("attn.W_Q"), &[d, d])?.transposed(),
                bq: take(&p("attn.b_Q"), &[d])?.data,
                wk_t: take(&p("attn.W_K"), &[d, d])?.transposed(),
                bk: take(&p("attn.b_K"), &[d])?.data,
                wv_t: take(&p("attn.W_V"), &[d, d])?.transposed(),
                bv: take(&p("attn.b_V"), &[d])?.data,
                wo_t: take(&p("attn.W_O"), &[d, d])?.transposed(),
                bo: take(&p("attn.b_O"), &[d])?.data,
                win_t: take(&p("mlp.W_in"), &[d, cfg.d_mlp])?.transposed(),
                bin: take(&p("mlp.b_in"), &[cfg.d_mlp])?.data,
                wout_t: take(&p("mlp.W_out"), &[cfg.d_mlp, d])?.transposed(),
                bout: take(&p("mlp.b_out"), &[d])?.data,
            });
        }
        let ln_f = LnWeights {
            scale: take("final_ln.scale", &[d])?.data,
            bias: take("final_ln.bias", &[d])?.data,
        };
        let w_u_t = take("unembed.W_U", &[d, cfg.vocab_size])?.transposed();
        if let Some(extra) = named.keys().next() {
            return Err(OrionError::Weights(alloc::format!("unexpected tensor {extra}")));
        }

        let rot_inv_freq = match &cfg.rotary {
            Some(r) => (0..r.rot_dims / 2)
                .map(|j| 1.0 / libm::powf(r.base, (2 * j) as f32 / r.rot_dims as f32))
                .collect(),
            None => Vec::new(),
        };
        Ok(Self { cfg, w_e, w_p, blocks, ln_f, w_u_t, rot_inv_freq })
    }

    /// Export back to canonically named, canonically oriented tensors.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("embed.W_E".to_string(), self.w_e.clone())];
        if let Some(wp) = &self.w_p {
            out.push(("embed.W_P".to_string(), wp.clone()));
        }
        let vecten = |v: &Vec<f32>| Tensor { shape: vec![v.len()], data: v.clone() };
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| alloc::format!("block.{l}.{s}");
            out.push((p("ln1.scale"), vecten(&b.ln1.scale)));
            out.push((p("ln1.bias"), vecten(&b.ln1.bias)));
            out.push((p("ln2.scale"), vecten(&b.ln2.scale)));
            out.push((p("ln2.bias"), vecten(&b.ln2.bias)));
            out.push((p("attn.W_Q"), b.wq_t.transposed()));
            out.push((p("attn.b_Q"), vecten(&b.bq)));
            out.push((p("attn.W_K"), b.wk_t.transposed()));
            out.push((p("attn.b_K"), vecten(&b.bk)));
            out.push((p("attn.W_V"), b.wv_t.transposed()));
            out.push((p("attn.b_V"), vecten(&b.bv)));
            out.push((p("attn.W_O"), b.wo_t.transposed()));
            out.push((p("attn.b_O"), vecten(&b.bo)));
            out.push((p("mlp.W_in"), b.win_t.transposed()));
            out.push((p("mlp.b_in"), vecten(&b.bin)));
            out.push((p("mlp.W_out"), b.wout_t.transposed()));
            out.push((p("mlp.b_out"), vecten(&b.bout)));
        }
        out.push(("final_ln.scale".to_string(), vecten(&self.ln_f.scale)));
        out.push(("final_ln.bias".to_string(), vecten(&self.ln_f.bias)));
        out.push(("unembed.W_U".to_string(), self.w_u_t.transposed()));
        out
    }

    /// Random tiny model for tests and oracles: N(0, 0.05) weights, small
    /// random biases, identity-ish layer norms.
    pub fn random(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::derive(seed, "model");
        let mut named = BTreeMap::new();
        for (name, shape) in expected_shapes(&cfg) {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("ln1.scale")
                || name.ends_with("ln2.scale")
                || name.ends_with("final_ln.scale")
            {
                (0..numel).map(|_| 1.0 + crate::rng::normal(&mut rng, 0.0, 0.02)).collect()
            } else if name.ends_with(".bias") || name.contains(".b_") {
                (0..numel).map(|_| crate::rng::normal(&mut rng, 0.0, 0.01)).collect()
            } else {
                (0..numel).map(|_| crate::rng::normal(&mut rng, 0.0, 0.05)).collect()
            };
            named.insert(name, Tensor { shape, data });
        }
        Self::from_named(cfg, named)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_cfg(variant: AttnVariant, layers: usize) -> ModelConfig {
        ModelConfig {
            model_id: alloc::format!("tiny-{layers}"),
            n_layers: layers,
            n_heads: 2,
            d_model: 8,
            d_mlp: 16,
            vocab_size: 11,
            max_seq_len: 16,
            attn_variant: variant,
            ln_eps: 1e-5,
            rotary: match variant {
                AttnVariant::Serial => None,
                AttnVariant::Parallel => Some(RotaryConfig { rot_dims: 2, base: 10000.0 }),
            },
        }
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut cfg = tiny_cfg(AttnVariant::Serial, 2);
        cfg.d_model = 9;
        assert!(cfg.validate().is_err(), "d_model % n_heads");

        let mut cfg = tiny_cfg(AttnVariant::Parallel, 2);
        cfg.rotary = None;
        assert!(cfg.validate().is_err(), "parallel requires rotary");

        let mut cfg = tiny_cfg(AttnVariant::Serial, 2);
        cfg.rotary = Some(RotaryConfig { rot_dims: 2, base: 10000.0 });
        assert!(cfg.validate().is_err(), "serial must not carry rotary");
    }

    #[test]
    fn named_round_trip_preserves_weights() {
        let cfg = tiny_cfg(AttnVariant::Serial, 2);
        let m = Model::random(cfg.clone(), 5).unwrap();
        let named: BTreeMap<_, _> = m.to_named().into_iter().collect();
        let m2 = Model::from_named(cfg, named).unwrap();
        assert_eq!(m.w_e, m2.w_e);
        assert_eq!(m.blocks[1].wq_t, m2.blocks[1].wq_t);
        assert_eq!(m.w_u_t, m2.w_u_t);
    }

    #[test]
    fn from_named_rejects_missing_and_extra() {
        let cfg = tiny_cfg(AttnVariant::Serial, 1);
        let m = Model::random(cfg.clone(), 1).unwrap();
        let mut named: BTreeMap<_, _> = m.to_named().into_iter().collect();
        named.remove("embed.W_E");
        assert!(Model::from_named(cfg.clone(), named.clone()).is_err());

        let mut named: BTreeMap<_, _> = m.to_named().into_iter().collect();
        named.insert("stray".into(), Tensor::zeros(alloc::vec![1]));
        assert!(Model::from_named(cfg, named).is_err());
    }

    #[test]
    fn expected_shapes_cover_variants() {
        let serial = expected_shapes(&tiny_cfg(AttnVariant::Serial, 2));
        assert!(serial.iter().any(|(n, _)| n == "embed.W_P"));
        let parallel = expected_shapes(&tiny_cfg(AttnVariant::Parallel, 2));
        assert!(!parallel.iter().any(|(n, _)| n == "embed.W_P"));
        assert_eq!(parallel.iter().filter(|(n, _)| n.contains("ln1.scale")).count(), 2);
    }
}
