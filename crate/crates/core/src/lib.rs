//! Token-level unlearning on a tiny autoregressive language model.
//!
//! The crate is organized around the stages of the unlearning pipeline:
//!
//! - [`lm`] — a small causal transformer (single-head attention + MLP blocks)
//!   over a flat `f64` parameter vector, with hand-written exact backprop.
//! - [`attribution`] — per-token importance: counterfactual-masking log-prob
//!   shifts, predictive entropy, composite scores, hard top-`r` selection and
//!   soft temperature weighting.
//! - [`objectives`] — token-level losses (GA, WGA, NPO, RMU), the unified
//!   weighted unlearning loss, the forward-KL retention regularizer, and the
//!   total objective.
//! - [`trainer`] — target fine-tuning and the unlearning loop (attribution →
//!   weights → weighted loss + KL → update), with run reports.
//! - [`snr`] — a synthetic-gradient Monte Carlo lab for the subspace
//!   signal/noise analysis that motivates token selection.
//! - [`datagen`] — a miniature synthetic QA dataset of fictitious facts with
//!   ground-truth knowledge-slot annotations.
//! - [`eval`] — answer-region NLL, greedy exact-match, and KL drift metrics.
//!
//! The crate is `no_std` compatible (with `alloc`); all IO, file formats and
//! the CLI live in the companion `unlearn-lab` crate. Scalar transcendentals
//! are routed through `libm` so results are identical across `std` and
//! `no_std` builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attribution;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lm;
pub mod math;
pub mod objectives;
pub mod snr;
pub mod trainer;

pub use error::{CoreError, Result};
pub use lm::{ForwardTrace, ModelConfig, ModelState, ParamSet, TokenSequence, Vocabulary};
