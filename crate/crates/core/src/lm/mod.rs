//! A tiny causal language model with exact hand-written gradients.
//!
//! Architecture, per layer: pre-RMSNorm single-head causal self-attention
//! with a residual add, then a pre-RMSNorm SiLU MLP with a residual add.
//! A final RMSNorm feeds the output projection. Parameters live in one flat
//! `f64` vector so that checkpointing, finite-difference checks, and
//! optimizer steps all operate on plain slices.
//!
//! Positions are zero-based. Logits row `t` predicts the token at position
//! `t + 1`, so per-token losses are defined for target positions `1..T`.

mod backward;
mod forward;
mod sequence;
mod vocab;

pub use backward::{backward, backward_weighted, BackwardSeed};
pub use forward::{forward, ForwardTrace};
pub use sequence::TokenSequence;
pub use vocab::Vocabulary;

use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::math;

/// Which parameter vector a forward pass reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Current,
    Reference,
}

/// Shape of the model. `ffn_dim` is the MLP expansion width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub context_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.vocab_size > 0
            && self.embed_dim > 0
            && self.ffn_dim > 0
            && self.n_layers > 0
            && self.context_len >= 2;
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidParameter {
                name: "model config",
                reason: "all dimensions must be positive and context_len >= 2",
            })
        }
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Flat-vector offsets for every parameter tensor.
///
/// Order: token embedding `[V×d]`, positional embedding `[ctx×d]`, then per
/// layer `w_q, w_k, w_v, w_o [d×d]`, `w_up [ff×d]`, `b_up [ff]`,
/// `w_down [d×ff]`, `b_down [d]`, and finally the output head `[V×d]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    d: usize,
    ff: usize,
    v: usize,
    ctx: usize,
    per_layer: usize,
    layers_base: usize,
    head_base: usize,
    pub(crate) total: usize,
}

impl Layout {
    pub(crate) fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let ff = cfg.ffn_dim;
        let v = cfg.vocab_size;
        let ctx = cfg.context_len;
        let per_layer = 4 * d * d + ff * d + ff + d * ff + d;
        let layers_base = v * d + ctx * d;
        let head_base = layers_base + cfg.n_layers * per_layer;
        let total = head_base + v * d;
        Self {
            d,
            ff,
            v,
            ctx,
            per_layer,
            layers_base,
            head_base,
            total,
        }
    }

    pub(crate) fn tok_emb(&self) -> core::ops::Range<usize> {
        0..self.v * self.d
    }

    pub(crate) fn pos_emb(&self) -> core::ops::Range<usize> {
        let start = self.v * self.d;
        start..start + self.ctx * self.d
    }

    fn layer_base(&self, l: usize) -> usize {
        self.layers_base + l * self.per_layer
    }

    pub(crate) fn w_q(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l);
        b..b + self.d * self.d
    }

    pub(crate) fn w_k(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + self.d * self.d;
        b..b + self.d * self.d
    }

    pub(crate) fn w_v(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 2 * self.d * self.d;
        b..b + self.d * self.d
    }

    pub(crate) fn w_o(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 3 * self.d * self.d;
        b..b + self.d * self.d
    }

    pub(crate) fn w_up(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 4 * self.d * self.d;
        b..b + self.ff * self.d
    }

    pub(crate) fn b_up(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 4 * self.d * self.d + self.ff * self.d;
        b..b + self.ff
    }

    pub(crate) fn w_down(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 4 * self.d * self.d + self.ff * self.d + self.ff;
        b..b + self.d * self.ff
    }

    pub(crate) fn b_down(&self, l: usize) -> core::ops::Range<usize> {
        let b = self.layer_base(l) + 4 * self.d * self.d + self.ff * self.d + self.ff
            + self.d * self.ff;
        b..b + self.d
    }

    pub(crate) fn w_out(&self) -> core::ops::Range<usize> {
        self.head_base..self.head_base + self.v * self.d
    }
}

/// Model parameters plus an optional frozen reference copy.
///
/// The `version` counter increments on every mutation of `params`; forward
/// traces record it so a backward pass against stale activations is refused.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: ModelConfig,
    params: Vec<f64>,
    reference: Option<Vec<f64>>,
    version: u64,
}

impl ModelState {
    /// All-zero parameters (useful for constructing exact test fixtures).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self {
            config,
            params: vec![0.0; n],
            reference: None,
            version: 0,
        })
    }

    /// Seeded scaled-Gaussian initialization.
    ///
    /// Scheme: embeddings `N(0, 0.1²)`; linear weights `N(0, 1/fan_in)`;
    /// biases zero; the residual-branch outputs `w_o` and `w_down` are
    /// additionally scaled by `1/sqrt(2·n_layers)`; the output head uses
    /// `N(0, 1/d)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let normal = StandardNormal;
        let mut fill = |range: core::ops::Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            for i in range {
                let z: f64 = normal.sample(rng);
                params[i] = std * z;
            }
        };
        let d = config.embed_dim as f64;
        let ff = config.ffn_dim as f64;
        let resid = 1.0 / math::sqrt(2.0 * config.n_layers as f64);
        fill(layout.tok_emb(), 0.1, &mut rng);
        fill(layout.pos_emb(), 0.1, &mut rng);
        for l in 0..config.n_layers {
            let w_std = 1.0 / math::sqrt(d);
            fill(layout.w_q(l), w_std, &mut rng);
            fill(layout.w_k(l), w_std, &mut rng);
            fill(layout.w_v(l), w_std, &mut rng);
            fill(layout.w_o(l), w_std * resid, &mut rng);
            fill(layout.w_up(l), w_std, &mut rng);
            fill(layout.w_down(l), resid / math::sqrt(ff), &mut rng);
        }
        fill(layout.w_out(), 1.0 / math::sqrt(d), &mut rng);
        Ok(Self {
            config,
            params,
            reference: None,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters; bumps the trace version.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Freezes the current parameters as the reference copy θ_o.
    pub fn freeze_reference(&mut self) {
        self.reference = Some(self.params.clone());
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    /// Installs an explicit reference vector (checkpoint restore path).
    pub fn set_reference(&mut self, reference: Vec<f64>) -> Result<()> {
        if reference.len() != self.params.len() {
            return Err(CoreError::LengthMismatch(
                "reference length must equal parameter length",
            ));
        }
        self.reference = Some(reference);
        Ok(())
    }

    /// Replaces the parameter vector (checkpoint restore path).
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(CoreError::LengthMismatch(
                "parameter vector length must match the model layout",
            ));
        }
        self.version += 1;
        self.params = params;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::NonFinite("model parameters"));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub(crate) fn param_slice(&self, set: ParamSet) -> Result<&[f64]> {
        match set {
            ParamSet::Current => Ok(&self.params),
            ParamSet::Reference => self
                .reference
                .as_deref()
                .ok_or(CoreError::MissingReference),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            embed_dim: 4,
            ffn_dim: 6,
            n_layers: 2,
            context_len: 8,
        }
    }

    #[test]
    fn layout_ranges_tile_the_vector_exactly() {
        let layout = Layout::new(&cfg());
        let mut seen = vec![0u8; layout.total];
        let mut mark = |r: core::ops::Range<usize>| {
            for i in r {
                seen[i] += 1;
            }
        };
        mark(layout.tok_emb());
        mark(layout.pos_emb());
        for l in 0..2 {
            mark(layout.w_q(l));
            mark(layout.w_k(l));
            mark(layout.w_v(l));
            mark(layout.w_o(l));
            mark(layout.w_up(l));
            mark(layout.b_up(l));
            mark(layout.w_down(l));
            mark(layout.b_down(l));
        }
        mark(layout.w_out());
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ModelState::init(cfg(), 11).unwrap();
        let b = ModelState::init(cfg(), 11).unwrap();
        let c = ModelState::init(cfg(), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn reference_freeze_is_a_snapshot() {
        let mut m = ModelState::init(cfg(), 3).unwrap();
        m.freeze_reference();
        let before = m.reference().unwrap().to_vec();
        m.params_mut()[0] += 1.0;
        assert_eq!(m.reference().unwrap(), before.as_slice());
        assert_ne!(m.params()[0], before[0]);
    }

    #[test]
    fn version_bumps_on_mutation() {
        let mut m = ModelState::zeros(cfg()).unwrap();
        let v0 = m.version();
        let _ = m.params_mut();
        assert_eq!(m.version(), v0 + 1);
    }
}
