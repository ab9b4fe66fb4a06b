//! Per-token importance scores and the weighting schemes built on them.
//!
//! Two signals are combined. Counterfactual masking measures, for each
//! target position, the absolute log-probability shift of the true token
//! when the knowledge slots of the question are replaced by the mask token.
//! Predictive entropy flags uncertain decision points the masking signal can
//! miss. Both are min-max normalized per sample and blended into a composite
//! score, which drives either hard top-`r` selection or soft temperature
//! weighting.
//!
//! Score vectors follow the target-position convention: a vector of length
//! `T − 1` whose entry `j` scores the prediction of `ids[j + 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::lm::{forward, ForwardTrace, ModelState, ParamSet, TokenSequence, Vocabulary};
use crate::math;

/// A sequence with every knowledge slot replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedVariant {
    pub ids: Vec<u32>,
    slots: Vec<usize>,
    source_ids: Vec<u32>,
}

/// Replaces each knowledge-slot position with the vocabulary's mask token.
///
/// Sequences without slot annotations are rejected: slot annotations come
/// from the dataset generator and there is no tagger fallback.
pub fn mask_knowledge(seq: &TokenSequence, vocab: &Vocabulary) -> Result<MaskedVariant> {
    if seq.knowledge_slots.is_empty() {
        return Err(CoreError::EmptyKnowledgeSlots);
    }
    seq.validate_ids(vocab.size())?;
    let mut ids = seq.ids.clone();
    for &slot in &seq.knowledge_slots {
        ids[slot] = vocab.mask_id();
    }
    Ok(MaskedVariant {
        ids,
        slots: seq.knowledge_slots.clone(),
        source_ids: seq.ids.clone(),
    })
}

impl MaskedVariant {
    fn check_derived_from(&self, seq: &TokenSequence) -> Result<()> {
        if self.source_ids != seq.ids || self.slots != seq.knowledge_slots {
            return Err(CoreError::MaskMismatch);
        }
        Ok(())
    }
}

/// Per-position attribution, entropy, normalized variants and the composite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceProfile {
    pub delta: Vec<f64>,
    pub entropy: Vec<f64>,
    pub delta_norm: Vec<f64>,
    pub entropy_norm: Vec<f64>,
    pub phi: Vec<f64>,
}

/// How per-token weights are produced from composite scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingMode {
    Uniform,
    Hard,
    Soft,
}

/// Weights over target positions.
///
/// Hard mode: indicator of the selected top-`r` set (weights in `{0,1}`,
/// exactly `max(1, round(r·(T−1)))` ones). Soft mode: a temperature softmax
/// of the composite scores (strictly positive, sums to 1). Uniform mode:
/// all ones, which reproduces plain sequence-level objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeights {
    pub mode: WeightingMode,
    pub weights: Vec<f64>,
    /// Selected positions (hard mode only), ascending.
    pub selected: Vec<usize>,
}

impl TokenWeights {
    pub fn uniform(n_targets: usize) -> Self {
        Self {
            mode: WeightingMode::Uniform,
            weights: vec![1.0; n_targets],
            selected: Vec::new(),
        }
    }

    /// Number of positions that contribute a loss term.
    pub fn active_terms(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }
}

/// Absolute log-probability shift `|log p(s_i | prefix) − log p(s_i | masked prefix)|`
/// per target position, under the chosen parameter set.
pub fn attribution_scores(
    model: &ModelState,
    seq: &TokenSequence,
    masked: &MaskedVariant,
    set: ParamSet,
) -> Result<Vec<f64>> {
    masked.check_derived_from(seq)?;
    let orig = forward(model, &seq.ids, set)?;
    let shifted = forward(model, &masked.ids, set)?;
    delta_from_traces(seq, &orig, &shifted)
}

fn delta_from_traces(
    seq: &TokenSequence,
    orig: &ForwardTrace,
    masked: &ForwardTrace,
) -> Result<Vec<f64>> {
    let mut delta = Vec::with_capacity(seq.len() - 1);
    for pos in seq.target_positions() {
        let token = seq.ids[pos];
        let lp = orig.token_log_prob(pos, token)?;
        let lp_masked = masked.token_log_prob(pos, token)?;
        delta.push(math::abs(lp - lp_masked));
    }
    Ok(delta)
}

/// Predictive entropy `H_i = −Σ_v p_v log p_v` per target position, from the
/// unmasked sequence. Always in `[0, log |V|]`.
pub fn entropy_scores(model: &ModelState, seq: &TokenSequence, set: ParamSet) -> Result<Vec<f64>> {
    let trace = forward(model, &seq.ids, set)?;
    Ok(entropy_from_trace(&trace))
}

pub(crate) fn entropy_from_trace(trace: &ForwardTrace) -> Vec<f64> {
    let t_len = trace.len();
    let mut out = Vec::with_capacity(t_len - 1);
    for pos in 1..t_len {
        let row = trace.log_prob_row(pos - 1);
        let mut h = 0.0;
        for lp in row {
            let p = math::exp(lp);
            h -= p * lp;
        }
        out.push(h.max(0.0));
    }
    out
}

/// `(x − min) / (max − min)` per element; all zeros when the scores are
/// constant (so a degenerate signal contributes nothing to the composite).
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|&x| (x - min) / range).collect()
}

/// Convex blend `φ = α·Δ̄ + (1−α)·H̄` of the normalized signals.
pub fn composite_scores(delta_norm: &[f64], entropy_norm: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if delta_norm.len() != entropy_norm.len() {
        return Err(CoreError::LengthMismatch(
            "delta and entropy score vectors",
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidParameter {
            name: "alpha",
            reason: "must lie in [0, 1]",
        });
    }
    Ok(delta_norm
        .iter()
        .zip(entropy_norm)
        .map(|(&d, &h)| alpha * d + (1.0 - alpha) * h)
        .collect())
}

/// Full importance profile for one sample: masking attribution, entropy,
/// per-sample min-max normalization, and the composite score.
pub fn importance_profile(
    model: &ModelState,
    seq: &TokenSequence,
    vocab: &Vocabulary,
    alpha: f64,
    set: ParamSet,
) -> Result<ImportanceProfile> {
    let masked = mask_knowledge(seq, vocab)?;
    let orig = forward(model, &seq.ids, set)?;
    let shifted = forward(model, &masked.ids, set)?;
    let delta = delta_from_traces(seq, &orig, &shifted)?;
    let entropy = entropy_from_trace(&orig);
    let delta_norm = minmax_normalize(&delta);
    let entropy_norm = minmax_normalize(&entropy);
    let phi = composite_scores(&delta_norm, &entropy_norm, alpha)?;
    Ok(ImportanceProfile {
        delta,
        entropy,
        delta_norm,
        entropy_norm,
        phi,
    })
}

/// Number of positions a hard selection keeps for `n_targets` candidates.
pub fn selection_size(n_targets: usize, r: f64) -> usize {
    let raw = math::round(r * n_targets as f64) as usize;
    raw.clamp(1, n_targets)
}

/// Top-`r` fraction of target positions ranked by score, ties broken toward
/// the earlier position. Returns ascending positions (values in `1..T`).
pub fn hard_select(phi: &[f64], r: f64) -> Result<Vec<usize>> {
    if phi.is_empty() {
        return Err(CoreError::EmptyInput("scores"));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(CoreError::InvalidParameter {
            name: "r",
            reason: "selection ratio must lie in (0, 1]",
        });
    }
    let keep = selection_size(phi.len(), r);
    let mut order: Vec<usize> = (0..phi.len()).collect();
    // Stable sort by descending score keeps earlier positions first on ties.
    order.sort_by(|&a, &b| phi[b].partial_cmp(&phi[a]).unwrap_or(core::cmp::Ordering::Equal));
    let mut selected: Vec<usize> = order[..keep].iter().map(|&j| j + 1).collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Builds the weight vector for the chosen mode.
pub fn token_weights(phi: &[f64], mode: WeightingMode, r: f64, tau: f64) -> Result<TokenWeights> {
    if phi.is_empty() {
        return Err(CoreError::EmptyInput("scores"));
    }
    match mode {
        WeightingMode::Uniform => Ok(TokenWeights::uniform(phi.len())),
        WeightingMode::Hard => {
            let selected = hard_select(phi, r)?;
            let mut weights = vec![0.0; phi.len()];
            for &pos in &selected {
                weights[pos - 1] = 1.0;
            }
            Ok(TokenWeights {
                mode,
                weights,
                selected,
            })
        }
        WeightingMode::Soft => {
            if !(tau > 0.0) {
                return Err(CoreError::InvalidParameter {
                    name: "tau",
                    reason: "softmax temperature must be positive",
                });
            }
            let scaled: Vec<f64> = phi.iter().map(|&x| x / tau).collect();
            let lse = math::log_sum_exp(&scaled);
            let weights: Vec<f64> = scaled.iter().map(|&x| math::exp(x - lse)).collect();
            Ok(TokenWeights {
                mode,
                weights,
                selected: Vec::new(),
            })
        }
    }
}
