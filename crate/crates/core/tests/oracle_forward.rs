//! Straight-line reference forward pass, independent of the library's
//! implementation, checked against `lm::forward` on a tiny model.
//!
//! The reference below re-derives everything from the documented parameter
//! layout with plain nested loops and `std` float math; it shares no helper
//! code with the crate.

use unlearn_core::lm::{forward, ModelConfig, ModelState, ParamSet};

struct Dims {
    v: usize,
    d: usize,
    ff: usize,
    layers: usize,
    ctx: usize,
}

/// Offsets per the documented layout order: token embedding, positional
/// embedding, per layer (w_q, w_k, w_v, w_o, w_up, b_up, w_down, b_down),
/// output head.
fn slice<'a>(params: &'a [f64], offset: &mut usize, len: usize) -> &'a [f64] {
    let s = &params[*offset..*offset + len];
    *offset += len;
    s
}

fn reference_logits(dims: &Dims, params: &[f64], ids: &[u32]) -> Vec<Vec<f64>> {
    let (v, d, ff) = (dims.v, dims.d, dims.ff);
    let t_len = ids.len();
    let mut off = 0usize;
    let tok_emb = slice(params, &mut off, v * d);
    let pos_emb = slice(params, &mut off, dims.ctx * d);
    struct Block<'a> {
        w_q: &'a [f64],
        w_k: &'a [f64],
        w_v: &'a [f64],
        w_o: &'a [f64],
        w_up: &'a [f64],
        b_up: &'a [f64],
        w_down: &'a [f64],
        b_down: &'a [f64],
    }
    let mut blocks = Vec::new();
    for _ in 0..dims.layers {
        blocks.push(Block {
            w_q: slice(params, &mut off, d * d),
            w_k: slice(params, &mut off, d * d),
            w_v: slice(params, &mut off, d * d),
            w_o: slice(params, &mut off, d * d),
            w_up: slice(params, &mut off, ff * d),
            b_up: slice(params, &mut off, ff),
            w_down: slice(params, &mut off, d * ff),
            b_down: slice(params, &mut off, d),
        });
    }
    let w_out = slice(params, &mut off, v * d);
    assert_eq!(off, params.len());

    let norm = |x: &[f64]| -> Vec<f64> {
        let ms: f64 = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
        let ri = 1.0 / (ms + 1e-8).sqrt();
        x.iter().map(|a| a * ri).collect()
    };
    let mat = |w: &[f64], x: &[f64], rows: usize, cols: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
            .collect()
    };

    let mut stream: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let id = ids[t] as usize;
            (0..d).map(|i| tok_emb[id * d + i] + pos_emb[t * d + i]).collect()
        })
        .collect();

    for b in &blocks {
        let h1: Vec<Vec<f64>> = stream.iter().map(|x| norm(x)).collect();
        let q: Vec<Vec<f64>> = h1.iter().map(|h| mat(b.w_q, h, d, d)).collect();
        let k: Vec<Vec<f64>> = h1.iter().map(|h| mat(b.w_k, h, d, d)).collect();
        let vv: Vec<Vec<f64>> = h1.iter().map(|h| mat(b.w_v, h, d, d)).collect();
        let mut xa = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let scores: Vec<f64> = (0..=t)
                .map(|j| {
                    (0..d).map(|i| q[t][i] * k[j][i]).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let mut ctx = vec![0.0; d];
            for j in 0..=t {
                for i in 0..d {
                    ctx[i] += exps[j] / denom * vv[j][i];
                }
            }
            let proj = mat(b.w_o, &ctx, d, d);
            xa.push((0..d).map(|i| stream[t][i] + proj[i]).collect::<Vec<f64>>());
        }
        let mut next = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let h2 = norm(&xa[t]);
            let mut u = mat(b.w_up, &h2, ff, d);
            for i in 0..ff {
                u[i] += b.b_up[i];
            }
            let act: Vec<f64> = u
                .iter()
                .map(|&x| x / (1.0 + (-x).exp()))
                .collect();
            let mut out = mat(b.w_down, &act, d, ff);
            for i in 0..d {
                out[i] += b.b_down[i] + xa[t][i];
            }
            next.push(out);
        }
        stream = next;
    }

    stream
        .iter()
        .map(|x| mat(w_out, &norm(x), v, d))
        .collect()
}

fn dims() -> (Dims, ModelConfig) {
    let cfg = ModelConfig {
        vocab_size: 3,
        embed_dim: 2,
        ffn_dim: 3,
        n_layers: 2,
        context_len: 6,
    };
    (
        Dims {
            v: 3,
            d: 2,
            ff: 3,
            layers: 2,
            ctx: 6,
        },
        cfg,
    )
}

#[test]
fn logits_match_the_reference_on_specific_weights() {
    let (dims, cfg) = dims();
    let mut model = ModelState::zeros(cfg).unwrap();
    // Deterministic, non-symmetric weights.
    {
        let params = model.params_mut();
        for (i, p) in params.iter_mut().enumerate() {
            *p = ((i as f64 * 0.7311).sin() + 0.1 * (i as f64)).rem_euclid(1.9) - 0.95;
        }
    }
    let ids = [0u32, 1, 2];
    let trace = forward(&model, &ids, ParamSet::Current).unwrap();
    let expected = reference_logits(&dims, model.params(), &ids);
    for t in 0..ids.len() {
        for v in 0..dims.v {
            let got = trace.logits_row(t)[v];
            let want = expected[t][v];
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "row {t} vocab {v}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn logits_match_the_reference_on_random_draws() {
    let (dims, cfg) = dims();
    for seed in 0..20 {
        let model = ModelState::init(cfg, seed).unwrap();
        let ids = [
            (seed % 3) as u32,
            ((seed + 1) % 3) as u32,
            ((seed + 2) % 3) as u32,
            (seed % 2) as u32,
        ];
        let trace = forward(&model, &ids, ParamSet::Current).unwrap();
        let expected = reference_logits(&dims, model.params(), &ids);
        for t in 0..ids.len() {
            for v in 0..dims.v {
                let got = trace.logits_row(t)[v];
                let want = expected[t][v];
                assert!(
                    (got - want).abs() <= 1e-11 * want.abs().max(1.0),
                    "seed {seed} row {t} vocab {v}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn hidden_states_match_a_zero_block_construction() {
    // With all block and head weights zero, the residual stream after every
    // block equals the embedding sum, so hidden_at returns the embedding
    // row of the input token plus its positional row.
    let cfg = ModelConfig {
        vocab_size: 4,
        embed_dim: 3,
        ffn_dim: 2,
        n_layers: 2,
        context_len: 4,
    };
    let mut model = ModelState::zeros(cfg).unwrap();
    {
        let params = model.params_mut();
        // Identity-ish embedding: token i gets 1.0 in coordinate min(i, d-1).
        for i in 0..cfg.vocab_size {
            params[i * cfg.embed_dim + i.min(cfg.embed_dim - 1)] = 1.0;
        }
    }
    let trace = forward(&model, &[0, 1, 2], ParamSet::Current).unwrap();
    for (t, &id) in [0u32, 1, 2].iter().enumerate() {
        for layer in 0..cfg.n_layers {
            let h = trace.hidden_at(layer, t).unwrap();
            let mut expected = vec![0.0; cfg.embed_dim];
            expected[(id as usize).min(cfg.embed_dim - 1)] = 1.0;
            assert_eq!(h, expected.as_slice(), "layer {layer} pos {t}");
        }
    }
}
