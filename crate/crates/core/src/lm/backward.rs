use alloc::vec;
use alloc::vec::Vec;

use super::forward::ForwardTrace;
use super::ModelState;
use crate::error::{CoreError, Result};
use crate::math;

/// Upstream gradients seeding a backward pass: a dense `T×|V|` gradient on
/// the logits plus optional gradients injected into the residual stream at
/// block outputs (used by representation-space losses).
#[derive(Debug, Clone)]
pub struct BackwardSeed {
    t_len: usize,
    vocab: usize,
    embed: usize,
    d_logits: Vec<f64>,
    /// One entry per layer; empty vector means no injected gradient.
    d_hidden: Vec<Vec<f64>>,
}

impl BackwardSeed {
    pub fn new(trace: &ForwardTrace) -> Self {
        let t_len = trace.len();
        let vocab = trace.vocab_size();
        let embed = trace.embed_dim();
        Self {
            t_len,
            vocab,
            embed,
            d_logits: vec![0.0; t_len * vocab],
            d_hidden: vec![Vec::new(); trace.hidden.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.d_logits.iter().all(|&g| g == 0.0)
            && self.d_hidden.iter().all(|h| h.is_empty())
    }

    /// Adds `grad` to the upstream gradient of logits row `row`.
    pub fn add_logits_row(&mut self, row: usize, grad: &[f64]) -> Result<()> {
        if row >= self.t_len {
            return Err(CoreError::PositionOutOfRange {
                pos: row,
                len: self.t_len,
            });
        }
        if grad.len() != self.vocab {
            return Err(CoreError::LengthMismatch("logits row gradient"));
        }
        let dst = &mut self.d_logits[row * self.vocab..(row + 1) * self.vocab];
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
        Ok(())
    }

    /// Seeds `weight · ∂ log p(ids[position] | prefix) / ∂ logits`, i.e. the
    /// classic `weight · (onehot − softmax)` row update.
    pub fn add_target_log_prob(
        &mut self,
        trace: &ForwardTrace,
        position: usize,
        weight: f64,
    ) -> Result<()> {
        if position == 0 || position >= self.t_len {
            return Err(CoreError::PositionOutOfRange {
                pos: position,
                len: self.t_len,
            });
        }
        if weight == 0.0 {
            return Ok(());
        }
        let row = position - 1;
        let target = trace.ids[position] as usize;
        let lse = trace.row_lse[row];
        let logits = trace.logits_row(row);
        let dst = &mut self.d_logits[row * self.vocab..(row + 1) * self.vocab];
        for v in 0..self.vocab {
            let p = math::exp(logits[v] - lse);
            let indicator = if v == target { 1.0 } else { 0.0 };
            dst[v] += weight * (indicator - p);
        }
        Ok(())
    }

    /// Injects a gradient on the hidden state of `layer` at `position`.
    pub fn add_hidden(&mut self, layer: usize, position: usize, grad: &[f64]) -> Result<()> {
        if layer >= self.d_hidden.len() {
            return Err(CoreError::LayerOutOfRange {
                layer,
                count: self.d_hidden.len(),
            });
        }
        if position >= self.t_len {
            return Err(CoreError::PositionOutOfRange {
                pos: position,
                len: self.t_len,
            });
        }
        if grad.len() != self.embed {
            return Err(CoreError::LengthMismatch("hidden gradient"));
        }
        if self.d_hidden[layer].is_empty() {
            self.d_hidden[layer] = vec![0.0; self.t_len * self.embed];
        }
        let dst = &mut self.d_hidden[layer][position * self.embed..(position + 1) * self.embed];
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
        Ok(())
    }
}

fn rmsnorm_bwd(dy: &[f64], x: &[f64], ri: f64, dx: &mut [f64]) {
    let n = x.len() as f64;
    let dot = math::dot(dy, x);
    let c = ri * ri * ri / n * dot;
    for i in 0..x.len() {
        dx[i] += ri * dy[i] - c * x[i];
    }
}

/// Exact reverse-mode pass. Returns `∂L/∂θ` as a flat vector aligned with
/// the model's parameter layout, where `L` is whatever scalar the seed's
/// upstream gradients describe.
pub fn backward(model: &ModelState, trace: &ForwardTrace, seed: &BackwardSeed) -> Result<Vec<f64>> {
    trace.check_matches(model)?;
    let cfg = *model.config();
    let t_len = trace.len();
    if seed.t_len != t_len || seed.vocab != cfg.vocab_size || seed.embed != cfg.embed_dim {
        return Err(CoreError::LengthMismatch("seed shape does not match trace"));
    }
    let params = model.param_slice(trace.param_set)?;
    let layout = model.layout();
    let d = cfg.embed_dim;
    let ff = cfg.ffn_dim;
    let v = cfg.vocab_size;
    let scale = 1.0 / math::sqrt(d as f64);

    let mut grad = vec![0.0; params.len()];

    // Output head and final norm.
    let w_out = &params[layout.w_out()];
    let stream_top: &[f64] = trace.hidden.last().map(Vec::as_slice).unwrap_or(&trace.x0);
    let mut d_stream = vec![0.0; t_len * d];
    {
        let (head, _) = grad.split_at_mut(layout.w_out().end);
        let d_w_out = &mut head[layout.w_out().start..];
        let mut d_hf = vec![0.0; d];
        for t in 0..t_len {
            let drow = &seed.d_logits[t * v..(t + 1) * v];
            if drow.iter().all(|&g| g == 0.0) {
                continue;
            }
            let hf_row = &trace.hf[t * d..(t + 1) * d];
            math::outer_acc(d_w_out, drow, hf_row, v, d);
            d_hf.iter_mut().for_each(|x| *x = 0.0);
            math::matvec_t_acc(w_out, drow, v, d, &mut d_hf);
            rmsnorm_bwd(
                &d_hf,
                &stream_top[t * d..(t + 1) * d],
                trace.rf[t],
                &mut d_stream[t * d..(t + 1) * d],
            );
        }
    }

    // Blocks in reverse.
    for l in (0..cfg.n_layers).rev() {
        if !seed.d_hidden[l].is_empty() {
            for (dst, g) in d_stream.iter_mut().zip(&seed.d_hidden[l]) {
                *dst += g;
            }
        }
        let lt = &trace.layers[l];
        let x_in: &[f64] = if l == 0 {
            &trace.x0
        } else {
            &trace.hidden[l - 1]
        };
        let w_q = &params[layout.w_q(l)];
        let w_k = &params[layout.w_k(l)];
        let w_v = &params[layout.w_v(l)];
        let w_o = &params[layout.w_o(l)];
        let w_up = &params[layout.w_up(l)];
        let w_down = &params[layout.w_down(l)];

        // MLP sublayer.
        let mut d_xa = d_stream.clone(); // residual branch
        {
            let mut d_act = vec![0.0; ff];
            let mut d_u = vec![0.0; ff];
            let mut d_h2 = vec![0.0; d];
            for t in 0..t_len {
                let d_out_row = &d_stream[t * d..(t + 1) * d];
                if d_out_row.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let act_row = &lt.act[t * ff..(t + 1) * ff];
                let u_row = &lt.u[t * ff..(t + 1) * ff];
                let h2_row = &lt.h2[t * d..(t + 1) * d];

                math::outer_acc(&mut grad[layout.w_down(l)], d_out_row, act_row, d, ff);
                math::axpy(1.0, d_out_row, &mut grad[layout.b_down(l)]);

                d_act.iter_mut().for_each(|x| *x = 0.0);
                math::matvec_t_acc(w_down, d_out_row, d, ff, &mut d_act);
                for i in 0..ff {
                    d_u[i] = d_act[i] * math::silu_deriv(u_row[i]);
                }
                math::outer_acc(&mut grad[layout.w_up(l)], &d_u, h2_row, ff, d);
                math::axpy(1.0, &d_u, &mut grad[layout.b_up(l)]);

                d_h2.iter_mut().for_each(|x| *x = 0.0);
                math::matvec_t_acc(w_up, &d_u, ff, d, &mut d_h2);
                rmsnorm_bwd(
                    &d_h2,
                    &lt.xa[t * d..(t + 1) * d],
                    lt.r2[t],
                    &mut d_xa[t * d..(t + 1) * d],
                );
            }
        }

        // Attention sublayer: xa = x + W_o ctx.
        let mut d_x = d_xa.clone(); // residual branch
        let mut d_ctx = vec![0.0; t_len * d];
        for t in 0..t_len {
            let d_row = &d_xa[t * d..(t + 1) * d];
            if d_row.iter().all(|&g| g == 0.0) {
                continue;
            }
            math::outer_acc(
                &mut grad[layout.w_o(l)],
                d_row,
                &lt.ctx[t * d..(t + 1) * d],
                d,
                d,
            );
            math::matvec_t_acc(w_o, d_row, d, d, &mut d_ctx[t * d..(t + 1) * d]);
        }

        let mut d_q = vec![0.0; t_len * d];
        let mut d_k = vec![0.0; t_len * d];
        let mut d_v = vec![0.0; t_len * d];
        let mut d_a = vec![0.0; t_len];
        for t in 0..t_len {
            let d_ctx_row = &d_ctx[t * d..(t + 1) * d];
            let a_row = &lt.attn[t * t_len..(t + 1) * t_len];
            if d_ctx_row.iter().all(|&g| g == 0.0) {
                continue;
            }
            let mut dot_sum = 0.0;
            for j in 0..=t {
                let da = math::dot(d_ctx_row, &lt.v[j * d..(j + 1) * d]);
                d_a[j] = da;
                dot_sum += a_row[j] * da;
                math::axpy(a_row[j], d_ctx_row, &mut d_v[j * d..(j + 1) * d]);
            }
            let q_row = &lt.q[t * d..(t + 1) * d];
            for j in 0..=t {
                let ds = a_row[j] * (d_a[j] - dot_sum) * scale;
                if ds == 0.0 {
                    continue;
                }
                math::axpy(ds, &lt.k[j * d..(j + 1) * d], &mut d_q[t * d..(t + 1) * d]);
                math::axpy(ds, q_row, &mut d_k[j * d..(j + 1) * d]);
            }
        }

        let mut d_h1 = vec![0.0; d];
        for t in 0..t_len {
            let h1_row = &lt.h1[t * d..(t + 1) * d];
            let dq_row = &d_q[t * d..(t + 1) * d];
            let dk_row = &d_k[t * d..(t + 1) * d];
            let dv_row = &d_v[t * d..(t + 1) * d];
            d_h1.iter_mut().for_each(|x| *x = 0.0);
            math::outer_acc(&mut grad[layout.w_q(l)], dq_row, h1_row, d, d);
            math::outer_acc(&mut grad[layout.w_k(l)], dk_row, h1_row, d, d);
            math::outer_acc(&mut grad[layout.w_v(l)], dv_row, h1_row, d, d);
            math::matvec_t_acc(w_q, dq_row, d, d, &mut d_h1);
            math::matvec_t_acc(w_k, dk_row, d, d, &mut d_h1);
            math::matvec_t_acc(w_v, dv_row, d, d, &mut d_h1);
            rmsnorm_bwd(
                &d_h1,
                &x_in[t * d..(t + 1) * d],
                lt.r1[t],
                &mut d_x[t * d..(t + 1) * d],
            );
        }
        d_stream = d_x;
    }

    // Embeddings.
    {
        let (emb, _) = grad.split_at_mut(layout.pos_emb().end);
        for (t, &id) in trace.ids.iter().enumerate() {
            let src = &d_stream[t * d..(t + 1) * d];
            let tok_dst = &mut emb[id as usize * d..(id as usize + 1) * d];
            for i in 0..d {
                tok_dst[i] += src[i];
            }
        }
        let pos_base = layout.pos_emb().start;
        for t in 0..t_len {
            let src = &d_stream[t * d..(t + 1) * d];
            let pos_dst = &mut emb[pos_base + t * d..pos_base + (t + 1) * d];
            for i in 0..d {
                pos_dst[i] += src[i];
            }
        }
    }

    Ok(grad)
}

/// Gradient of `Σ w_p · log p(ids[p] | prefix)` over the given
/// `(position, weight)` pairs.
pub fn backward_weighted(
    model: &ModelState,
    trace: &ForwardTrace,
    weighted_positions: &[(usize, f64)],
) -> Result<Vec<f64>> {
    let mut seed = BackwardSeed::new(trace);
    for &(position, weight) in weighted_positions {
        seed.add_target_log_prob(trace, position, weight)?;
    }
    backward(model, trace, &seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{forward, ModelConfig, ParamSet};

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
    fn zero_upstream_gives_zero_gradient() {
        let model = ModelState::init(tiny_cfg(), 1).unwrap();
        let trace = forward(&model, &[0, 1, 2, 3], ParamSet::Current).unwrap();
        let grad = backward_weighted(&model, &trace, &[(1, 0.0), (3, 0.0)]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_the_weights() {
        let model = ModelState::init(tiny_cfg(), 2).unwrap();
        let trace = forward(&model, &[4, 1, 0, 2], ParamSet::Current).unwrap();
        let g1 = backward_weighted(&model, &trace, &[(1, 0.3), (2, -0.7)]).unwrap();
        let g2 = backward_weighted(&model, &trace, &[(1, 0.5), (3, 1.1)]).unwrap();
        let gsum = backward_weighted(&model, &trace, &[(1, 0.8), (2, -0.7), (3, 1.1)]).unwrap();
        for i in 0..gsum.len() {
            assert!((g1[i] + g2[i] - gsum[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut model = ModelState::init(tiny_cfg(), 3).unwrap();
        let trace = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
        model.params_mut()[0] += 1.0;
        let err = backward_weighted(&model, &trace, &[(1, 1.0)]).unwrap_err();
        assert_eq!(err, CoreError::StaleTrace);
    }

    #[test]
    fn out_of_range_position_is_rejected() {
        let model = ModelState::init(tiny_cfg(), 3).unwrap();
        let trace = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
        assert!(backward_weighted(&model, &trace, &[(0, 1.0)]).is_err());
        assert!(backward_weighted(&model, &trace, &[(3, 1.0)]).is_err());
    }
}
