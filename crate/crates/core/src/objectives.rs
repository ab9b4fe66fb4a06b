//! Token-level unlearning losses and the retention regularizer.
//!
//! Per-token losses, for a target position with log-probability `lp` under
//! the current parameters (and `lp_o` under the frozen reference):
//!
//! - GA:  `lp` — minimizing it drives the likelihood of the forget token
//!   down, i.e. ascends the NLL.
//! - WGA: `e^{γ·lp} · lp` — confidence-damped GA; the weight vanishes as
//!   the token is forgotten.
//! - NPO: `(2/β) · softplus(β·(lp − lp_o))` — bounded negative-preference
//!   loss, computed in log space so extreme probability ratios cannot
//!   overflow.
//! - RMU: `‖h − c·u‖²` — drives the chosen layer's hidden state toward a
//!   fixed random target direction.
//!
//! The unified unlearning loss is the batch mean of `Σ_i ω_i ℓ_i` over
//! target positions; uniform weights reproduce the sequence-level
//! objectives exactly. Retention uses the forward KL
//! `KL(p_ref ‖ p_current)` summed over target positions of retain
//! sequences, and the total objective is `unlearn + λ · KL`. The trainer
//! minimizes all of these as written.

use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::lm::{backward, forward, BackwardSeed, ForwardTrace, ModelState, ParamSet, TokenSequence};
use crate::attribution::TokenWeights;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlearnMethod {
    Ga,
    Wga,
    Npo,
    Rmu,
}

impl UnlearnMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UnlearnMethod::Ga => "GA",
            UnlearnMethod::Wga => "WGA",
            UnlearnMethod::Npo => "NPO",
            UnlearnMethod::Rmu => "RMU",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GA" => Some(UnlearnMethod::Ga),
            "WGA" => Some(UnlearnMethod::Wga),
            "NPO" => Some(UnlearnMethod::Npo),
            "RMU" => Some(UnlearnMethod::Rmu),
            _ => None,
        }
    }

    /// Whether the loss needs a forward pass under the frozen reference.
    pub fn needs_reference(&self) -> bool {
        matches!(self, UnlearnMethod::Npo)
    }
}

/// Method choice plus every loss hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub method: UnlearnMethod,
    /// WGA confidence temperature γ.
    pub gamma: f64,
    /// NPO inverse temperature β.
    pub beta: f64,
    /// Layer whose hidden states RMU perturbs.
    pub rmu_layer: usize,
    /// RMU scaling factor c.
    pub rmu_scale: f64,
    /// Fixed random unit vector u of the hidden dimension, drawn once per
    /// run from a seeded sphere distribution.
    pub rmu_target: Vec<f64>,
    /// KL retention weight λ.
    pub lambda: f64,
}

impl ObjectiveConfig {
    /// Defaults: γ = 1.0, β = 0.1, c = 5.0, λ = 0.1, RMU at the middle
    /// layer, with `u` seeded from `seed`.
    pub fn new(method: UnlearnMethod, embed_dim: usize, n_layers: usize, seed: u64) -> Self {
        Self {
            method,
            gamma: 1.0,
            beta: 0.1,
            rmu_layer: n_layers.saturating_sub(1) / 2,
            rmu_scale: 5.0,
            rmu_target: seeded_unit_vector(embed_dim, seed),
            lambda: 0.1,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "gamma",
                reason: "must be positive",
            });
        }
        if !(self.beta > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "beta",
                reason: "must be positive",
            });
        }
        if !(self.rmu_scale > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "rmu_scale",
                reason: "must be positive",
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "lambda",
                reason: "must be nonnegative",
            });
        }
        if self.rmu_layer >= n_layers {
            return Err(CoreError::LayerOutOfRange {
                layer: self.rmu_layer,
                count: n_layers,
            });
        }
        let norm = math::sqrt(math::dot(&self.rmu_target, &self.rmu_target));
        if math::abs(norm - 1.0) > 1e-9 {
            return Err(CoreError::InvalidParameter {
                name: "rmu_target",
                reason: "must be a unit vector",
            });
        }
        Ok(())
    }
}

/// A uniformly distributed unit vector (normalized Gaussian), seeded.
pub fn seeded_unit_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = math::sqrt(math::dot(&v, &v));
        if norm > 1e-12 {
            return v.iter().map(|&x| x / norm).collect();
        }
    }
}

/// The per-token loss value at `position` (zero-based target position).
///
/// `ref_trace` must be supplied for NPO and is ignored otherwise.
pub fn token_loss(
    cfg: &ObjectiveConfig,
    trace: &ForwardTrace,
    ref_trace: Option<&ForwardTrace>,
    position: usize,
) -> Result<f64> {
    let (value, _) = token_loss_with_upstream(cfg, trace, ref_trace, position)?;
    Ok(value)
}

/// Upstream gradient of one token loss: either `dℓ/d log p` for the
/// likelihood-based methods or `dℓ/dh` for the representation loss.
pub(crate) enum Upstream {
    LogProb(f64),
    Hidden(Vec<f64>),
}

pub(crate) fn token_loss_with_upstream(
    cfg: &ObjectiveConfig,
    trace: &ForwardTrace,
    ref_trace: Option<&ForwardTrace>,
    position: usize,
) -> Result<(f64, Upstream)> {
    let token = *trace
        .ids()
        .get(position)
        .ok_or(CoreError::PositionOutOfRange {
            pos: position,
            len: trace.len(),
        })?;
    match cfg.method {
        UnlearnMethod::Ga => {
            let lp = trace.token_log_prob(position, token)?;
            Ok((lp, Upstream::LogProb(1.0)))
        }
        UnlearnMethod::Wga => {
            let lp = trace.token_log_prob(position, token)?;
            let p_gamma = math::exp(cfg.gamma * lp);
            Ok((
                p_gamma * lp,
                Upstream::LogProb(p_gamma * (cfg.gamma * lp + 1.0)),
            ))
        }
        UnlearnMethod::Npo => {
            let reference = ref_trace.ok_or(CoreError::MissingReference)?;
            let lp = trace.token_log_prob(position, token)?;
            let lp_ref = reference.token_log_prob(position, token)?;
            let z = cfg.beta * (lp - lp_ref);
            let value = (2.0 / cfg.beta) * math::softplus(z);
            Ok((value, Upstream::LogProb(2.0 * math::sigmoid(z))))
        }
        UnlearnMethod::Rmu => {
            // The hidden state that produced this prediction sits one row
            // earlier in the stream.
            let h = trace.hidden_at(cfg.rmu_layer, position - 1)?;
            let mut d_h = Vec::with_capacity(h.len());
            let mut value = 0.0;
            for (hi, ui) in h.iter().zip(&cfg.rmu_target) {
                let diff = hi - cfg.rmu_scale * ui;
                value += diff * diff;
                d_h.push(2.0 * diff);
            }
            Ok((value, Upstream::Hidden(d_h)))
        }
    }
}

/// Batch mean of `Σ_i ω_i ℓ_i(θ)` with its exact gradient.
///
/// Weight vectors must have one entry per target position (`T − 1`);
/// zero-weight positions contribute nothing. With all-ones weights this is
/// exactly the sequence-level objective.
pub fn unified_unlearn_loss(
    model: &ModelState,
    batch: &[(&TokenSequence, &TokenWeights)],
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CoreError::EmptyInput("unlearning batch"));
    }
    let mut total_loss = 0.0;
    let mut total_grad = alloc::vec![0.0; model.param_count()];
    for (seq, weights) in batch {
        if weights.weights.len() != seq.len() - 1 {
            return Err(CoreError::LengthMismatch(
                "token weights must cover every target position",
            ));
        }
        let trace = forward(model, &seq.ids, ParamSet::Current)?;
        let ref_trace = if cfg.method.needs_reference() {
            Some(forward(model, &seq.ids, ParamSet::Reference)?)
        } else {
            None
        };
        let mut seed = BackwardSeed::new(&trace);
        let mut samp_loss = 0.0;
        for pos in seq.target_positions() {
            let w = weights.weights[pos - 1];
            if w == 0.0 {
                continue;
            }
            let (value, upstream) =
                token_loss_with_upstream(cfg, &trace, ref_trace.as_ref(), pos)?;
            samp_loss += w * value;
            match upstream {
                Upstream::LogProb(dldlp) => {
                    seed.add_target_log_prob(&trace, pos, w * dldlp)?;
                }
                Upstream::Hidden(mut d_h) => {
                    d_h.iter_mut().for_each(|g| *g *= w);
                    seed.add_hidden(cfg.rmu_layer, pos - 1, &d_h)?;
                }
            }
        }
        total_loss += samp_loss;
        if !seed.is_zero() {
            let grad = backward(model, &trace, &seed)?;
            math::axpy(1.0, &grad, &mut total_grad);
        }
    }
    let inv_b = 1.0 / batch.len() as f64;
    total_loss *= inv_b;
    total_grad.iter_mut().for_each(|g| *g *= inv_b);
    if !total_loss.is_finite() {
        return Err(CoreError::NonFinite("unlearning loss"));
    }
    Ok((total_loss, total_grad))
}

/// Batch mean of `Σ_k KL(p_ref(·|prefix) ‖ p_current(·|prefix))` over target
/// positions, with its gradient w.r.t. the current parameters.
pub fn kl_retention_loss(
    model: &ModelState,
    batch: &[&TokenSequence],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CoreError::EmptyInput("retain batch"));
    }
    if !model.has_reference() {
        return Err(CoreError::MissingReference);
    }
    let mut total_loss = 0.0;
    let mut total_grad = alloc::vec![0.0; model.param_count()];
    for seq in batch {
        let trace = forward(model, &seq.ids, ParamSet::Current)?;
        let ref_trace = forward(model, &seq.ids, ParamSet::Reference)?;
        let mut seed = BackwardSeed::new(&trace);
        let vocab = trace.vocab_size();
        let mut d_row = alloc::vec![0.0; vocab];
        for pos in seq.target_positions() {
            let row = pos - 1;
            let lp = trace.log_prob_row(row);
            let lp_ref = ref_trace.log_prob_row(row);
            let mut kl = 0.0;
            for v in 0..vocab {
                let p_ref = math::exp(lp_ref[v]);
                kl += p_ref * (lp_ref[v] - lp[v]);
                // d KL / d logits_v = p_v − p_ref_v
                d_row[v] = math::exp(lp[v]) - p_ref;
            }
            total_loss += kl.max(0.0);
            seed.add_logits_row(row, &d_row)?;
        }
        let grad = backward(model, &trace, &seed)?;
        math::axpy(1.0, &grad, &mut total_grad);
    }
    let inv_b = 1.0 / batch.len() as f64;
    total_loss *= inv_b;
    total_grad.iter_mut().for_each(|g| *g *= inv_b);
    Ok((total_loss, total_grad))
}

/// `L_total = L_unlearn + λ · L_KL`.
pub fn total_loss(unlearn: f64, kl: f64, lambda: f64) -> f64 {
    unlearn + lambda * kl
}
