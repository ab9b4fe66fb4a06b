//! Answer-region metrics: teacher-forced NLL, greedy exact-match, KL drift.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::lm::{forward, ModelState, ParamSet, TokenSequence};
use crate::math;

/// Metrics over one dataset split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    /// Mean per-token negative log-likelihood over answer positions.
    pub nll: f64,
    /// Fraction of samples whose greedy decode reproduces the answer.
    pub exact_match: f64,
}

fn check_vocab(model: &ModelState, seqs: &[&TokenSequence]) -> Result<()> {
    let v = model.config().vocab_size;
    for seq in seqs {
        seq.validate_ids(v)?;
    }
    Ok(())
}

/// Teacher-forced NLL and greedy exact-match over the answer regions.
pub fn evaluate(model: &ModelState, seqs: &[&TokenSequence]) -> Result<SplitMetrics> {
    if seqs.is_empty() {
        return Err(CoreError::EmptyInput("evaluation split"));
    }
    check_vocab(model, seqs)?;
    let mut nll_sum = 0.0;
    let mut token_count = 0usize;
    let mut matches = 0usize;
    for seq in seqs {
        let trace = forward(model, &seq.ids, ParamSet::Current)?;
        for pos in seq.answer_positions() {
            nll_sum -= trace.token_log_prob(pos, seq.ids[pos])?;
            token_count += 1;
        }
        if greedy_decode_answer(model, seq)? == seq.answer_ids() {
            matches += 1;
        }
    }
    Ok(SplitMetrics {
        nll: nll_sum / token_count as f64,
        exact_match: matches as f64 / seqs.len() as f64,
    })
}

/// Greedily decodes the answer region from the question prefix. Argmax ties
/// resolve to the lowest token id, so decoding is deterministic.
pub fn greedy_decode_answer(model: &ModelState, seq: &TokenSequence) -> Result<Vec<u32>> {
    let mut ids: Vec<u32> = seq.question_ids().to_vec();
    let answer_len = seq.len() - seq.answer_start;
    let mut out = Vec::with_capacity(answer_len);
    for _ in 0..answer_len {
        let trace = forward(model, &ids, ParamSet::Current)?;
        let row = trace.logits_row(ids.len() - 1);
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for (v, &z) in row.iter().enumerate() {
            if z > best_z {
                best_z = z;
                best = v;
            }
        }
        out.push(best as u32);
        ids.push(best as u32);
    }
    Ok(out)
}

/// Mean per-position forward KL `KL(p_ref ‖ p_current)` over all target
/// positions of the given sequences. Requires a frozen reference.
pub fn kl_drift(model: &ModelState, seqs: &[&TokenSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(CoreError::EmptyInput("kl drift split"));
    }
    if !model.has_reference() {
        return Err(CoreError::MissingReference);
    }
    check_vocab(model, seqs)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        let trace = forward(model, &seq.ids, ParamSet::Current)?;
        let ref_trace = forward(model, &seq.ids, ParamSet::Reference)?;
        for pos in seq.target_positions() {
            let row = pos - 1;
            let lp = trace.log_prob_row(row);
            let lp_ref = ref_trace.log_prob_row(row);
            let mut kl = 0.0;
            for v in 0..lp.len() {
                kl += math::exp(lp_ref[v]) * (lp_ref[v] - lp[v]);
            }
            total += kl.max(0.0);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use alloc::vec;

    #[test]
    fn uniform_model_nll_is_log_vocab() {
        let model = ModelState::zeros(ModelConfig {
            vocab_size: 256,
            embed_dim: 4,
            ffn_dim: 4,
            n_layers: 1,
            context_len: 8,
        })
        .unwrap();
        let seq = TokenSequence::new(vec![1, 2, 3, 4], 2, vec![0]).unwrap();
        let m = evaluate(&model, &[&seq]).unwrap();
        assert!((m.nll - math::ln(256.0)).abs() < 1e-9);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = ModelState::init(
            ModelConfig {
                vocab_size: 12,
                embed_dim: 4,
                ffn_dim: 6,
                n_layers: 1,
                context_len: 8,
            },
            8,
        )
        .unwrap();
        let seq = TokenSequence::new(vec![1, 2, 3, 4, 5], 3, vec![0]).unwrap();
        let a = evaluate(&model, &[&seq]).unwrap();
        let b = evaluate(&model, &[&seq]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let model = ModelState::zeros(ModelConfig {
            vocab_size: 4,
            embed_dim: 4,
            ffn_dim: 4,
            n_layers: 1,
            context_len: 8,
        })
        .unwrap();
        let seq = TokenSequence::new(vec![1, 9], 1, vec![0]).unwrap();
        assert!(matches!(
            evaluate(&model, &[&seq]),
            Err(CoreError::TokenOutOfVocab { .. })
        ));
    }

    #[test]
    fn kl_drift_is_zero_against_own_reference() {
        let mut model = ModelState::init(
            ModelConfig {
                vocab_size: 9,
                embed_dim: 4,
                ffn_dim: 4,
                n_layers: 1,
                context_len: 8,
            },
            3,
        )
        .unwrap();
        model.freeze_reference();
        let seq = TokenSequence::new(vec![1, 2, 3], 2, vec![0]).unwrap();
        assert_eq!(kl_drift(&model, &[&seq]).unwrap(), 0.0);
    }
}
