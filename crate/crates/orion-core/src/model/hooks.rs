//! Activation addressing: hook points, captured caches, overrides.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};
use crate::tensor::Tensor;

/// Sequence position, resolvable against a concrete input. `Last` lets the
/// same point apply to sequences of different lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    Abs(usize),
    Last,
}

impl Pos {
    pub fn resolve(self, seq_len: usize) -> Result<usize> {
        match self {
            Pos::Last => Ok(seq_len - 1),
            Pos::Abs(p) if p < seq_len => Ok(p),
            Pos::Abs(p) => Err(OrionError::Hook(alloc::format!(
                "position {p} out of range for sequence length {seq_len}"
            ))),
        }
    }
}

/// Addressable activations.
///
/// `ResidPost { layer: l }` is the residual stream entering block `l`;
/// `l = 0` is the embedding output, so the addressable range covers the
/// stream up to the input of the last block. The final residual is not
/// separately addressable: its only consumer is the unembedding, which
/// `Logits` covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HookPoint {
    ResidPost { layer: usize, pos: Pos },
    /// Full post-softmax attention pattern of one head, `[seq, seq]`.
    AttnPattern { layer: usize, head: usize },
    /// One head's additive contribution to the residual stream (its OV
    /// output through the relevant `W_O` rows, bias excluded) at a position.
    HeadOut { layer: usize, head: usize, pos: Pos },
    MlpOut { layer: usize, pos: Pos },
    Logits { pos: Pos },
}

impl HookPoint {
    /// Normalize `Last` to an absolute index and range-check everything.
    pub fn resolve(self, n_layers: usize, n_heads: usize, seq_len: usize) -> Result<HookPoint> {
        let check_layer = |l: usize| {
            if l < n_layers {
                Ok(())
            } else {
                Err(OrionError::Hook(alloc::format!("layer {l} out of range (n_layers {n_layers})")))
            }
        };
        let check_head = |h: usize| {
            if h < n_heads {
                Ok(())
            } else {
                Err(OrionError::Hook(alloc::format!("head {h} out of range (n_heads {n_heads})")))
            }
        };
        Ok(match self {
            HookPoint::ResidPost { layer, pos } => {
                check_layer(layer)?;
                HookPoint::ResidPost { layer, pos: Pos::Abs(pos.resolve(seq_len)?) }
            }
            HookPoint::AttnPattern { layer, head } => {
                check_layer(layer)?;
                check_head(head)?;
                HookPoint::AttnPattern { layer, head }
            }
            HookPoint::HeadOut { layer, head, pos } => {
                check_layer(layer)?;
                check_head(head)?;
                HookPoint::HeadOut { layer, head, pos: Pos::Abs(pos.resolve(seq_len)?) }
            }
            HookPoint::MlpOut { layer, pos } => {
                check_layer(layer)?;
                HookPoint::MlpOut { layer, pos: Pos::Abs(pos.resolve(seq_len)?) }
            }
            HookPoint::Logits { pos } => HookPoint::Logits { pos: Pos::Abs(pos.resolve(seq_len)?) },
        })
    }
}

/// Captured activations keyed by resolved hook points.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ActivationCache {
    map: BTreeMap<HookPoint, Tensor>,
    pub seq_len: usize,
}

impl ActivationCache {
    pub fn new(seq_len: usize) -> Self {
        Self { map: BTreeMap::new(), seq_len }
    }

    pub(crate) fn insert(&mut self, point: HookPoint, value: Tensor) {
        self.map.insert(point, value);
    }

    /// Look up a point; `Last` positions resolve against this cache's own
    /// sequence length.
    pub fn get(&self, point: HookPoint) -> Option<&Tensor> {
        let resolved = point.resolve(usize::MAX, usize::MAX, self.seq_len).ok()?;
        self.map.get(&resolved)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HookPoint, &Tensor)> {
        self.map.iter()
    }
}

/// An intervention applied before any downstream consumer reads the point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Override {
    /// Replace the activation at a point with a same-shaped value.
    Replace { point: HookPoint, value: Tensor },
    /// Replace the context-range columns of one head's attention row at
    /// `row_pos` with the source row's context columns, then renormalize the
    /// whole row to sum to one together with the untouched non-context mass.
    AttnSplice {
        layer: usize,
        head: usize,
        row_pos: Pos,
        /// Target context columns `[start, end)`.
        ctx: (usize, usize),
        /// Source pattern row (over the source sequence).
        src_row: Vec<f32>,
        /// Source context columns `[start, end)`; must have the same width
        /// as `ctx`.
        src_ctx: (usize, usize),
    },
}

impl Override {
    pub fn point_for_dedup(&self) -> HookPoint {
        match self {
            Override::Replace { point, .. } => *point,
            Override::AttnSplice { layer, head, .. } => {
                HookPoint::AttnPattern { layer: *layer, head: *head }
            }
        }
    }
}
