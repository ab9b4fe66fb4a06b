use alloc::vec;
use alloc::vec::Vec;

use super::{ModelState, ParamSet};
use crate::error::{CoreError, Result};
use crate::math;

const RMS_EPS: f64 = 1e-8;

/// Cached activations from one forward pass, sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) ids: Vec<u32>,
    pub(crate) param_set: ParamSet,
    pub(crate) version: u64,
    /// `T×d` token + positional embeddings.
    pub(crate) x0: Vec<f64>,
    pub(crate) layers: Vec<LayerTrace>,
    /// Residual stream after each block, `n_layers` matrices of `T×d`.
    pub(crate) hidden: Vec<Vec<f64>>,
    /// Final RMS-normed stream, `T×d`.
    pub(crate) hf: Vec<f64>,
    pub(crate) rf: Vec<f64>,
    /// Row-major `T×|V|`; row `t` predicts the token at position `t+1`.
    pub logits: Vec<f64>,
    /// Per-row `ln Σ_v e^{logit}` for stable log-softmax lookups.
    pub(crate) row_lse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub(crate) h1: Vec<f64>,   // T×d, normed attention input
    pub(crate) r1: Vec<f64>,   // T, inverse rms for h1
    pub(crate) q: Vec<f64>,    // T×d
    pub(crate) k: Vec<f64>,    // T×d
    pub(crate) v: Vec<f64>,    // T×d
    pub(crate) attn: Vec<f64>, // T×T row-stochastic lower-triangular
    pub(crate) ctx: Vec<f64>,  // T×d
    pub(crate) xa: Vec<f64>,   // T×d, stream after attention residual
    pub(crate) h2: Vec<f64>,   // T×d, normed MLP input
    pub(crate) r2: Vec<f64>,   // T
    pub(crate) u: Vec<f64>,    // T×ff, MLP pre-activation
    pub(crate) act: Vec<f64>,  // T×ff, silu(u)
}

pub(crate) fn rmsnorm_row(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let ms = math::dot(x, x) / n;
    let ri = 1.0 / math::sqrt(ms + RMS_EPS);
    for i in 0..x.len() {
        out[i] = x[i] * ri;
    }
    ri
}

/// Runs the model over `ids`, recording every intermediate needed by
/// [`backward`](super::backward).
///
/// Row `t` of the logits depends only on `ids[..=t]` (causal masking), and
/// the per-layer hidden states are the post-block residual streams.
pub fn forward(model: &ModelState, ids: &[u32], set: ParamSet) -> Result<ForwardTrace> {
    let cfg = *model.config();
    let t_len = ids.len();
    if t_len < 1 {
        return Err(CoreError::EmptyInput("token sequence"));
    }
    if t_len > cfg.context_len {
        return Err(CoreError::SequenceTooLong {
            len: t_len,
            max: cfg.context_len,
        });
    }
    for &id in ids {
        if id as usize >= cfg.vocab_size {
            return Err(CoreError::TokenOutOfVocab {
                id,
                size: cfg.vocab_size,
            });
        }
    }
    let params = model.param_slice(set)?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::NonFinite("model parameters"));
    }
    let layout = model.layout();
    let d = cfg.embed_dim;
    let ff = cfg.ffn_dim;
    let v = cfg.vocab_size;
    let scale = 1.0 / math::sqrt(d as f64);

    let tok_emb = &params[layout.tok_emb()];
    let pos_emb = &params[layout.pos_emb()];
    let mut x0 = vec![0.0; t_len * d];
    for (t, &id) in ids.iter().enumerate() {
        let e = &tok_emb[id as usize * d..(id as usize + 1) * d];
        let p = &pos_emb[t * d..(t + 1) * d];
        let row = &mut x0[t * d..(t + 1) * d];
        for i in 0..d {
            row[i] = e[i] + p[i];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_layers);
    let mut stream = x0.clone();

    for l in 0..cfg.n_layers {
        let w_q = &params[layout.w_q(l)];
        let w_k = &params[layout.w_k(l)];
        let w_v = &params[layout.w_v(l)];
        let w_o = &params[layout.w_o(l)];
        let w_up = &params[layout.w_up(l)];
        let b_up = &params[layout.b_up(l)];
        let w_down = &params[layout.w_down(l)];
        let b_down = &params[layout.b_down(l)];

        let mut h1 = vec![0.0; t_len * d];
        let mut r1 = vec![0.0; t_len];
        for t in 0..t_len {
            r1[t] = rmsnorm_row(&stream[t * d..(t + 1) * d], &mut h1[t * d..(t + 1) * d]);
        }

        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        let mut vv = vec![0.0; t_len * d];
        for t in 0..t_len {
            let h = &h1[t * d..(t + 1) * d];
            math::matvec_acc(w_q, h, d, d, &mut q[t * d..(t + 1) * d]);
            math::matvec_acc(w_k, h, d, d, &mut k[t * d..(t + 1) * d]);
            math::matvec_acc(w_v, h, d, d, &mut vv[t * d..(t + 1) * d]);
        }

        let mut attn = vec![0.0; t_len * t_len];
        let mut ctx = vec![0.0; t_len * d];
        let mut scores = vec![0.0; t_len];
        for t in 0..t_len {
            let qt = &q[t * d..(t + 1) * d];
            let mut m = f64::NEG_INFINITY;
            for j in 0..=t {
                let s = math::dot(qt, &k[j * d..(j + 1) * d]) * scale;
                scores[j] = s;
                m = m.max(s);
            }
            let mut denom = 0.0;
            for j in 0..=t {
                let e = math::exp(scores[j] - m);
                scores[j] = e;
                denom += e;
            }
            let arow = &mut attn[t * t_len..(t + 1) * t_len];
            let crow = &mut ctx[t * d..(t + 1) * d];
            for j in 0..=t {
                let a = scores[j] / denom;
                arow[j] = a;
                math::axpy(a, &vv[j * d..(j + 1) * d], crow);
            }
        }

        let mut xa = stream.clone();
        for t in 0..t_len {
            math::matvec_acc(
                w_o,
                &ctx[t * d..(t + 1) * d],
                d,
                d,
                &mut xa[t * d..(t + 1) * d],
            );
        }

        let mut h2 = vec![0.0; t_len * d];
        let mut r2 = vec![0.0; t_len];
        for t in 0..t_len {
            r2[t] = rmsnorm_row(&xa[t * d..(t + 1) * d], &mut h2[t * d..(t + 1) * d]);
        }

        let mut u = vec![0.0; t_len * ff];
        let mut act = vec![0.0; t_len * ff];
        let mut out = xa.clone();
        for t in 0..t_len {
            let urow = &mut u[t * ff..(t + 1) * ff];
            urow.copy_from_slice(b_up);
            math::matvec_acc(w_up, &h2[t * d..(t + 1) * d], ff, d, urow);
            let arow = &mut act[t * ff..(t + 1) * ff];
            for i in 0..ff {
                arow[i] = math::silu(urow[i]);
            }
            let orow = &mut out[t * d..(t + 1) * d];
            for i in 0..d {
                orow[i] += b_down[i];
            }
            math::matvec_acc(w_down, arow, d, ff, orow);
        }

        layers.push(LayerTrace {
            h1,
            r1,
            q,
            k,
            v: vv,
            attn,
            ctx,
            xa,
            h2,
            r2,
            u,
            act,
        });
        hidden.push(out.clone());
        stream = out;
    }

    let mut hf = vec![0.0; t_len * d];
    let mut rf = vec![0.0; t_len];
    for t in 0..t_len {
        rf[t] = rmsnorm_row(&stream[t * d..(t + 1) * d], &mut hf[t * d..(t + 1) * d]);
    }

    let w_out = &params[layout.w_out()];
    let mut logits = vec![0.0; t_len * v];
    let mut row_lse = vec![0.0; t_len];
    for t in 0..t_len {
        let row = &mut logits[t * v..(t + 1) * v];
        math::matvec_acc(w_out, &hf[t * d..(t + 1) * d], v, d, row);
        row_lse[t] = math::log_sum_exp(row);
    }

    Ok(ForwardTrace {
        ids: ids.to_vec(),
        param_set: set,
        version: model.version(),
        x0,
        layers,
        hidden,
        hf,
        rf,
        logits,
        row_lse,
    })
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn param_set(&self) -> ParamSet {
        self.param_set
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len() / self.ids.len()
    }

    pub fn logits_row(&self, row: usize) -> &[f64] {
        let v = self.vocab_size();
        &self.logits[row * v..(row + 1) * v]
    }

    /// `log p(token | prefix)` for the prediction at `position` (zero-based,
    /// `1 <= position < T`). Stable log-softmax; the result is always ≤ 0.
    pub fn token_log_prob(&self, position: usize, token: u32) -> Result<f64> {
        if position == 0 || position >= self.ids.len() {
            return Err(CoreError::PositionOutOfRange {
                pos: position,
                len: self.ids.len(),
            });
        }
        let v = self.vocab_size();
        if token as usize >= v {
            return Err(CoreError::TokenOutOfVocab {
                id: token,
                size: v,
            });
        }
        let row = position - 1;
        Ok(self.logits[row * v + token as usize] - self.row_lse[row])
    }

    /// Log-softmax of a logits row.
    pub fn log_prob_row(&self, row: usize) -> Vec<f64> {
        let lse = self.row_lse[row];
        self.logits_row(row).iter().map(|&z| z - lse).collect()
    }

    /// Hidden state (post-block residual stream) for `layer` at `position`.
    pub fn hidden_at(&self, layer: usize, position: usize) -> Result<&[f64]> {
        if layer >= self.hidden.len() {
            return Err(CoreError::LayerOutOfRange {
                layer,
                count: self.hidden.len(),
            });
        }
        if position >= self.ids.len() {
            return Err(CoreError::PositionOutOfRange {
                pos: position,
                len: self.ids.len(),
            });
        }
        let d = self.x0.len() / self.ids.len();
        Ok(&self.hidden[layer][position * d..(position + 1) * d])
    }

    pub(crate) fn embed_dim(&self) -> usize {
        self.x0.len() / self.ids.len()
    }

    pub(crate) fn check_matches(&self, model: &ModelState) -> Result<()> {
        if self.version != model.version() && self.param_set == ParamSet::Current {
            return Err(CoreError::StaleTrace);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            embed_dim: 4,
            ffn_dim: 6,
            n_layers: 2,
            context_len: 8,
        }
    }

    #[test]
    fn zero_head_gives_uniform_rows() {
        // Zero weights everywhere force all-zero logits, i.e. probability
        // 1/|V| per vocabulary entry.
        let model = ModelState::zeros(tiny_cfg()).unwrap();
        let trace = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
        assert!(trace.logits.iter().all(|&z| z == 0.0));
        let p = math::exp(trace.token_log_prob(1, 3).unwrap());
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn causality_rows_ignore_suffix_changes() {
        let model = ModelState::init(tiny_cfg(), 42).unwrap();
        let a = forward(&model, &[0, 1, 2, 3], ParamSet::Current).unwrap();
        let b = forward(&model, &[0, 1, 4, 4], ParamSet::Current).unwrap();
        let v = tiny_cfg().vocab_size;
        assert_eq!(&a.logits[..2 * v], &b.logits[..2 * v]);
        assert_ne!(&a.logits[2 * v..], &b.logits[2 * v..]);
    }

    #[test]
    fn rows_normalize_to_one() {
        let model = ModelState::init(tiny_cfg(), 9).unwrap();
        let trace = forward(&model, &[1, 2, 3, 0, 4], ParamSet::Current).unwrap();
        for pos in 1..trace.len() {
            let total: f64 = (0..tiny_cfg().vocab_size as u32)
                .map(|tok| math::exp(trace.token_log_prob(pos, tok).unwrap()))
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn context_overflow_is_an_error() {
        let model = ModelState::zeros(tiny_cfg()).unwrap();
        let ids = vec![0u32; 9];
        assert!(matches!(
            forward(&model, &ids, ParamSet::Current),
            Err(CoreError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn non_finite_parameters_are_an_error() {
        let mut model = ModelState::zeros(tiny_cfg()).unwrap();
        model.params_mut()[3] = f64::NAN;
        assert!(matches!(
            forward(&model, &[0, 1], ParamSet::Current),
            Err(CoreError::NonFinite(_))
        ));
    }

    #[test]
    fn reference_forward_reads_the_frozen_copy() {
        let mut model = ModelState::init(tiny_cfg(), 5).unwrap();
        model.freeze_reference();
        let before = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
        model.params_mut().iter_mut().for_each(|p| *p += 0.05);
        let reference = forward(&model, &[0, 1, 2], ParamSet::Reference).unwrap();
        let current = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
        assert_eq!(before.logits, reference.logits);
        assert_ne!(before.logits, current.logits);
    }
}
