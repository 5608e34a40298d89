//! Core laboratory for causal analysis of transformer language models.
//!
//! Everything in this crate is deterministic and allocation-only (`no_std` +
//! `alloc`): byte-level BPE tokenization, f32 forward passes for serial
//! (GPT-2-style) and parallel (Pythia-style) decoder architectures with
//! activation capture and override hooks, the ORION structured retrieval
//! task framework, task-level metrics, interchange interventions (residual
//! sweeps, limit layers, alignment scores, direct effects, attention
//! patching), and the request-patching prompt-injection oversight
//! application.
//!
//! File formats, weight loading, parallel drivers, and the CLI live in the
//! companion `orion-lab` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod intervene;
pub mod metrics;
pub mod model;
pub mod oversight;
pub mod rng;
pub mod task;
pub mod tensor;
pub mod tokenizer;

pub use error::{OrionError, Result};
