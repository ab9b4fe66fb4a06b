//! Target fine-tuning and the token-level unlearning loop.
//!
//! The unlearning loop executes, per forget batch: recompute importance
//! profiles under the current parameters (optionally frozen at the
//! reference), build hard/soft/uniform weights, take one minimization step
//! on `L_unlearn + λ·L_KL` with a 1:1 retain batch, and log metrics at the
//! configured cadence. A NaN loss aborts the run and restores the last
//! evaluated checkpoint.
//!
//! Everything is single-threaded and driven by one seeded generator, so a
//! `(seed, config, data)` triple fully determines the parameter trajectory
//! and the report.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attribution::{importance_profile, token_weights, TokenWeights, WeightingMode};
use crate::datagen::Dataset;
use crate::error::{CoreError, Result};
use crate::eval::{evaluate, kl_drift};
use crate::lm::{
    backward, forward, BackwardSeed, ModelState, ParamSet, TokenSequence, Vocabulary,
};
use crate::math;
use crate::objectives::{
    kl_retention_loss, token_loss_with_upstream, unified_unlearn_loss, ObjectiveConfig, Upstream,
};

/// Wall-clock source for run reports. The core crate has no timer; callers
/// inject one (or [`NullClock`] for reproducible zero timestamps).
pub trait Clock {
    fn now_secs(&self) -> f64;
}

pub struct NullClock;

impl Clock for NullClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain SGD with a fixed learning rate (default).
    Sgd,
    /// Adaptive-moment estimation.
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum OptState {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    },
}

impl OptState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adam => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let b1c = 1.0 - math::powf(ADAM_BETA1, *t as f64);
                let b2c = 1.0 - math::powf(ADAM_BETA2, *t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = m[i] / b1c;
                    let vhat = v[i] / b2c;
                    params[i] -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
                }
            }
        }
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub weighting: WeightingMode,
    /// Hard-selection ratio.
    pub r: f64,
    /// Attribution/entropy blend.
    pub alpha: f64,
    /// Soft-weight temperature.
    pub tau: f64,
    pub objective: ObjectiveConfig,
    /// Epochs between metric records (also the checkpoint-snapshot cadence).
    pub eval_every: usize,
    /// Compute importance scores under the frozen reference instead of the
    /// current parameters.
    pub score_under_reference: bool,
    /// Fine-tuning only: per-slot probability of presenting a sample with
    /// that knowledge slot masked, so the mask token is in-distribution.
    pub mask_exposure_prob: f64,
    /// Fine-tuning only: stop once both splits reach this exact-match rate.
    pub early_stop_em: f64,
}

impl TrainConfig {
    /// Library defaults mirroring the documented run settings: SGD, hard
    /// weighting with `r = 0.2`, `α = 0.7`, `τ = 0.5`, eval every epoch.
    pub fn new(objective: ObjectiveConfig, seed: u64) -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.5,
            optimizer: OptimizerKind::Sgd,
            seed,
            weighting: WeightingMode::Hard,
            r: 0.2,
            alpha: 0.7,
            tau: 0.5,
            objective,
            eval_every: 1,
            score_under_reference: false,
            mask_exposure_prob: 0.01,
            early_stop_em: 0.995,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "learning_rate",
                reason: "must be positive",
            });
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidParameter {
                name: "batch_size",
                reason: "must be positive",
            });
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(CoreError::InvalidParameter {
                name: "r",
                reason: "must lie in (0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::InvalidParameter {
                name: "alpha",
                reason: "must lie in [0, 1]",
            });
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "tau",
                reason: "must be positive",
            });
        }
        if !(0.0..=1.0).contains(&self.mask_exposure_prob) {
            return Err(CoreError::InvalidParameter {
                name: "mask_exposure_prob",
                reason: "must lie in [0, 1]",
            });
        }
        self.objective.validate(n_layers)
    }
}

/// One row of metrics at an evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    /// Epochs completed when the record was taken.
    pub step: u64,
    pub forget_nll: f64,
    pub retain_nll: f64,
    pub forget_em: f64,
    pub retain_em: f64,
    pub retain_kl: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<EvalRecord>,
    /// Total number of nonzero-weight loss terms processed.
    pub token_update_count: u64,
    /// Set when a NaN loss forced a rollback to the last snapshot.
    pub aborted_at_step: Option<u64>,
}

impl RunReport {
    pub fn first(&self) -> Option<&EvalRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

/// Fine-tunes `base` on the full dataset until it memorizes it, then
/// freezes the result as the reference copy.
///
/// Fails with diagnostics if either split's exact-match rate is below 0.95
/// within the epoch budget. With a fixed seed the returned checkpoint is
/// bit-identical across reruns.
pub fn finetune_target(
    base: &ModelState,
    dataset: &Dataset,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<ModelState> {
    if dataset.samples.is_empty() {
        return Err(CoreError::EmptyInput("fine-tuning dataset"));
    }
    cfg.validate(base.config().n_layers)?;
    let mut model = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, model.param_count());
    let seqs: Vec<&TokenSequence> = dataset.samples.iter().map(|s| &s.seq).collect();
    let forget = dataset.forget();
    let retain = dataset.retain();
    let check_every = cfg.eval_every.max(1);

    let mut indices: Vec<usize> = (0..seqs.len()).collect();
    let mut scratch_ids: Vec<u32> = Vec::new();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; model.param_count()];
            let mut token_count = 0usize;
            for &i in chunk {
                let seq = seqs[i];
                scratch_ids.clear();
                scratch_ids.extend_from_slice(&seq.ids);
                for &slot in &seq.knowledge_slots {
                    if cfg.mask_exposure_prob > 0.0
                        && rng.random::<f64>() < cfg.mask_exposure_prob
                    {
                        scratch_ids[slot] = vocab.mask_id();
                    }
                }
                let trace = forward(&model, &scratch_ids, ParamSet::Current)?;
                let mut seed = BackwardSeed::new(&trace);
                for pos in 1..scratch_ids.len() {
                    seed.add_target_log_prob(&trace, pos, -1.0)?;
                    token_count += 1;
                }
                let g = backward(&model, &trace, &seed)?;
                math::axpy(1.0, &g, &mut grad);
            }
            let scale = 1.0 / token_count as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(model.params_mut(), &grad, cfg.learning_rate);
        }
        if epoch % check_every == 0 || epoch == cfg.epochs {
            if split_em(&model, &forget)? >= cfg.early_stop_em
                && split_em(&model, &retain)? >= cfg.early_stop_em
            {
                break;
            }
        }
    }

    let forget_em = split_em(&model, &forget)?;
    let retain_em = split_em(&model, &retain)?;
    if forget_em < 0.95 || retain_em < 0.95 {
        return Err(CoreError::NonConvergence(alloc::format!(
            "exact-match after {} epochs: forget {:.3}, retain {:.3} (need 0.95 each)",
            cfg.epochs,
            forget_em,
            retain_em,
        )));
    }
    model.freeze_reference();
    Ok(model)
}

#[derive(Debug)]
pub struct UnlearnOutcome {
    pub model: ModelState,
    pub report: RunReport,
}

/// Exact-match of a split, vacuously 1 when the split is empty.
fn split_em(model: &ModelState, seqs: &[&TokenSequence]) -> Result<f64> {
    if seqs.is_empty() {
        Ok(1.0)
    } else {
        evaluate(model, seqs).map(|m| m.exact_match)
    }
}

fn record_is_finite(r: &EvalRecord) -> bool {
    r.forget_nll.is_finite()
        && r.retain_nll.is_finite()
        && r.forget_em.is_finite()
        && r.retain_em.is_finite()
        && r.retain_kl.is_finite()
}

fn record_metrics(
    model: &ModelState,
    forget: &[&TokenSequence],
    retain: &[&TokenSequence],
    step: u64,
    clock: &dyn Clock,
) -> Result<EvalRecord> {
    let f = evaluate(model, forget)?;
    let r = evaluate(model, retain)?;
    let kl = kl_drift(model, retain)?;
    Ok(EvalRecord {
        step,
        forget_nll: f.nll,
        retain_nll: r.nll,
        forget_em: f.exact_match,
        retain_em: r.exact_match,
        retain_kl: kl,
        wall_clock_s: clock.now_secs(),
    })
}

fn sample_retain_batch(rng: &mut ChaCha8Rng, retain_len: usize, amount: usize) -> Vec<usize> {
    if amount <= retain_len {
        rand::seq::index::sample(rng, retain_len, amount).into_vec()
    } else {
        (0..amount).map(|_| rng.random_range(0..retain_len)).collect()
    }
}

/// Runs the token-level unlearning loop against a memorizing target model.
///
/// The reference copy is (re)frozen from the target's parameters at entry,
/// so the run always regularizes toward the pre-unlearning model.
pub fn unlearn(
    target: &ModelState,
    forget: &[&TokenSequence],
    retain: &[&TokenSequence],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    run_unlearn_loop(target, forget, retain, vocab, cfg, clock, false)
}

/// Dedicated sequence-level baseline: the plain unweighted objective with
/// the same batching, retain sampling, and update rule.
///
/// This is a separate code path from the weighted loss on purpose: the
/// uniform-weight run is required to reproduce it bit for bit.
pub fn unlearn_sequence_level(
    target: &ModelState,
    forget: &[&TokenSequence],
    retain: &[&TokenSequence],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    run_unlearn_loop(target, forget, retain, vocab, cfg, clock, true)
}

fn run_unlearn_loop(
    target: &ModelState,
    forget: &[&TokenSequence],
    retain: &[&TokenSequence],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    clock: &dyn Clock,
    sequence_level: bool,
) -> Result<UnlearnOutcome> {
    if forget.is_empty() {
        return Err(CoreError::EmptyInput("forget set"));
    }
    if retain.is_empty() {
        return Err(CoreError::EmptyInput("retain set"));
    }
    cfg.validate(target.config().n_layers)?;
    let mut model = target.clone();
    model.freeze_reference();

    let mut report = RunReport::default();
    report
        .records
        .push(record_metrics(&model, forget, retain, 0, clock)?);
    if cfg.epochs == 0 {
        return Ok(UnlearnOutcome { model, report });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, model.param_count());
    let mut snapshot = model.params().to_vec();
    let mut snapshot_step = 0u64;
    let eval_every = cfg.eval_every.max(1);
    let score_set = if cfg.score_under_reference {
        ParamSet::Reference
    } else {
        ParamSet::Current
    };

    let mut indices: Vec<usize> = (0..forget.len()).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let retain_idx = sample_retain_batch(&mut rng, retain.len(), chunk.len());

            let (unlearn_value, mut grad, terms) = if sequence_level {
                let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| forget[i]).collect();
                let (value, grad) = sequence_level_loss_grad(&model, &batch, &cfg.objective)?;
                let terms: u64 = batch.iter().map(|s| (s.len() - 1) as u64).sum();
                (value, grad, terms)
            } else {
                // Step 1-2 of the loop: per-sample scores and weights under
                // the configured parameter set.
                let mut weights: Vec<TokenWeights> = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let seq = forget[i];
                    let w = match cfg.weighting {
                        WeightingMode::Uniform => TokenWeights::uniform(seq.len() - 1),
                        mode => {
                            let profile =
                                importance_profile(&model, seq, vocab, cfg.alpha, score_set)?;
                            token_weights(&profile.phi, mode, cfg.r, cfg.tau)?
                        }
                    };
                    weights.push(w);
                }
                let batch: Vec<(&TokenSequence, &TokenWeights)> = chunk
                    .iter()
                    .zip(&weights)
                    .map(|(&i, w)| (forget[i], w))
                    .collect();
                let (value, grad) = unified_unlearn_loss(&model, &batch, &cfg.objective)?;
                let terms: u64 = weights.iter().map(|w| w.active_terms() as u64).sum();
                (value, grad, terms)
            };

            let mut total_value = unlearn_value;
            if cfg.objective.lambda != 0.0 {
                let batch: Vec<&TokenSequence> =
                    retain_idx.iter().map(|&i| retain[i]).collect();
                let (kl_value, kl_grad) = kl_retention_loss(&model, &batch)?;
                total_value += cfg.objective.lambda * kl_value;
                math::axpy(cfg.objective.lambda, &kl_grad, &mut grad);
            }

            if !total_value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                model.set_params(snapshot)?;
                report.aborted_at_step = Some(epoch as u64);
                report
                    .records
                    .push(record_metrics(&model, forget, retain, snapshot_step, clock)?);
                return Ok(UnlearnOutcome { model, report });
            }

            report.token_update_count += terms;
            opt.step(model.params_mut(), &grad, cfg.learning_rate);
        }

        if epoch % eval_every == 0 || epoch == cfg.epochs {
            let rec = record_metrics(&model, forget, retain, epoch as u64, clock)?;
            if !record_is_finite(&rec) {
                // The parameters still evaluate to NaN: roll back instead of
                // snapshotting an unhealthy checkpoint.
                model.set_params(snapshot)?;
                report.aborted_at_step = Some(epoch as u64);
                report
                    .records
                    .push(record_metrics(&model, forget, retain, snapshot_step, clock)?);
                return Ok(UnlearnOutcome { model, report });
            }
            report.records.push(rec);
            snapshot = model.params().to_vec();
            snapshot_step = epoch as u64;
        }
    }

    Ok(UnlearnOutcome { model, report })
}

fn sequence_level_loss_grad(
    model: &ModelState,
    batch: &[&TokenSequence],
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut total_loss = 0.0;
    let mut total_grad = vec![0.0; model.param_count()];
    for seq in batch {
        let trace = forward(model, &seq.ids, ParamSet::Current)?;
        let ref_trace = if cfg.method.needs_reference() {
            Some(forward(model, &seq.ids, ParamSet::Reference)?)
        } else {
            None
        };
        let mut seed = BackwardSeed::new(&trace);
        for pos in seq.target_positions() {
            let (value, upstream) = token_loss_with_upstream(cfg, &trace, ref_trace.as_ref(), pos)?;
            total_loss += value;
            match upstream {
                Upstream::LogProb(dldlp) => seed.add_target_log_prob(&trace, pos, dldlp)?,
                Upstream::Hidden(d_h) => seed.add_hidden(cfg.rmu_layer, pos - 1, &d_h)?,
            }
        }
        let g = backward(model, &trace, &seed)?;
        math::axpy(1.0, &g, &mut total_grad);
    }
    let inv_b = 1.0 / batch.len() as f64;
    total_loss *= inv_b;
    total_grad.iter_mut().for_each(|g| *g *= inv_b);
    Ok((total_loss, total_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{single_fact_dataset, DataParams};
    use crate::lm::ModelConfig;
    use crate::objectives::{ObjectiveConfig, UnlearnMethod};

    fn tiny_model(vocab_size: usize, seed: u64) -> ModelState {
        ModelState::init(
            ModelConfig {
                vocab_size,
                embed_dim: 12,
                ffn_dim: 24,
                n_layers: 2,
                context_len: 24,
            },
            seed,
        )
        .unwrap()
    }

    fn cfg_for(model: &ModelState, method: UnlearnMethod, seed: u64) -> TrainConfig {
        let objective = ObjectiveConfig::new(
            method,
            model.config().embed_dim,
            model.config().n_layers,
            seed,
        );
        TrainConfig::new(objective, seed)
    }

    #[test]
    fn one_fact_is_memorized_exactly() {
        let (ds, vocab) = single_fact_dataset();
        let base = tiny_model(vocab.size(), 1);
        let mut cfg = cfg_for(&base, UnlearnMethod::Ga, 1);
        cfg.epochs = 400;
        cfg.batch_size = 1;
        cfg.learning_rate = 0.01;
        cfg.optimizer = OptimizerKind::Adam;
        cfg.eval_every = 20;
        cfg.early_stop_em = 1.0;
        let target = finetune_target(&base, &ds, &vocab, &cfg).unwrap();
        let m = evaluate(&target, &[&ds.samples[0].seq]).unwrap();
        assert_eq!(m.exact_match, 1.0);
        assert!(target.has_reference());
    }

    #[test]
    fn finetune_is_bitwise_deterministic() {
        let (ds, vocab) = single_fact_dataset();
        let base = tiny_model(vocab.size(), 2);
        let mut cfg = cfg_for(&base, UnlearnMethod::Ga, 9);
        cfg.epochs = 50;
        cfg.batch_size = 1;
        cfg.learning_rate = 0.01;
        cfg.optimizer = OptimizerKind::Adam;
        cfg.eval_every = 50;
        cfg.early_stop_em = 2.0; // never early-stop: exercise the full budget
        let run = || {
            let mut c = cfg.clone();
            c.early_stop_em = 2.0;
            finetune_target(&base, &ds, &vocab, &c)
        };
        // Both runs must fail or succeed identically; compare parameters on
        // whichever branch we get.
        match (run(), run()) {
            (Ok(a), Ok(b)) => assert_eq!(a.params(), b.params()),
            (Err(a), Err(b)) => assert_eq!(a, b),
            _ => panic!("nondeterministic convergence"),
        }
    }

    #[test]
    fn nonconvergence_reports_diagnostics() {
        let (ds, vocab) = single_fact_dataset();
        let base = tiny_model(vocab.size(), 3);
        let mut cfg = cfg_for(&base, UnlearnMethod::Ga, 3);
        cfg.epochs = 1; // cannot memorize in one epoch
        cfg.learning_rate = 1e-4;
        let err = finetune_target(&base, &ds, &vocab, &cfg).unwrap_err();
        match err {
            CoreError::NonConvergence(msg) => assert!(msg.contains("exact-match")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_epochs_returns_the_target_unchanged() {
        let params = DataParams {
            num_entities: 10,
            qa_per_entity: 2,
            forget_fraction: 0.1,
            seed: 5,
        };
        let (ds, vocab) = crate::datagen::generate(&params).unwrap();
        let mut target = tiny_model(vocab.size(), 4);
        target.freeze_reference();
        let mut cfg = cfg_for(&target, UnlearnMethod::Ga, 5);
        cfg.epochs = 0;
        let out = unlearn(
            &target,
            &ds.forget(),
            &ds.retain(),
            &vocab,
            &cfg,
            &NullClock,
        )
        .unwrap();
        assert_eq!(out.model.params(), target.params());
        assert_eq!(out.report.records.len(), 1);
        assert_eq!(out.report.records[0].step, 0);
        assert_eq!(out.report.token_update_count, 0);
    }

    #[test]
    fn empty_forget_set_is_rejected() {
        let (_, vocab) = single_fact_dataset();
        let target = tiny_model(vocab.size(), 4);
        let cfg = cfg_for(&target, UnlearnMethod::Ga, 5);
        let seq = TokenSequence::new(alloc::vec![0, 1, 2], 1, alloc::vec![0]).unwrap();
        let err = unlearn(&target, &[], &[&seq], &vocab, &cfg, &NullClock).unwrap_err();
        assert_eq!(err, CoreError::EmptyInput("forget set"));
    }

    #[test]
    fn uniform_mode_matches_the_baseline_path_bitwise() {
        let params = DataParams {
            num_entities: 10,
            qa_per_entity: 2,
            forget_fraction: 0.2,
            seed: 11,
        };
        let (ds, vocab) = crate::datagen::generate(&params).unwrap();
        let target = tiny_model(vocab.size(), 6);
        for method in [
            UnlearnMethod::Ga,
            UnlearnMethod::Wga,
            UnlearnMethod::Npo,
            UnlearnMethod::Rmu,
        ] {
            let mut cfg = cfg_for(&target, method, 21);
            cfg.epochs = 2;
            cfg.learning_rate = 0.05;
            cfg.weighting = WeightingMode::Uniform;
            let a = unlearn(&target, &ds.forget(), &ds.retain(), &vocab, &cfg, &NullClock)
                .unwrap();
            let b = unlearn_sequence_level(
                &target,
                &ds.forget(),
                &ds.retain(),
                &vocab,
                &cfg,
                &NullClock,
            )
            .unwrap();
            assert_eq!(a.model.params(), b.model.params(), "method {method:?}");
            assert_eq!(a.report.records, b.report.records);
            assert_eq!(a.report.token_update_count, b.report.token_update_count);
        }
    }

    #[test]
    fn ga_step_increases_forget_nll() {
        let (ds, vocab) = single_fact_dataset();
        let base = tiny_model(vocab.size(), 7);
        let mut ft = cfg_for(&base, UnlearnMethod::Ga, 7);
        ft.epochs = 400;
        ft.batch_size = 1;
        ft.learning_rate = 0.01;
        ft.optimizer = OptimizerKind::Adam;
        ft.eval_every = 20;
        let target = finetune_target(&base, &ds, &vocab, &ft).unwrap();
        let seqs = [&ds.samples[0].seq];
        let before = evaluate(&target, &seqs).unwrap().nll;

        let mut cfg = cfg_for(&target, UnlearnMethod::Ga, 8);
        cfg.epochs = 1;
        cfg.batch_size = 1;
        cfg.learning_rate = 0.05;
        cfg.weighting = WeightingMode::Uniform;
        cfg.objective.lambda = 0.0;
        let out = unlearn(&target, &seqs, &seqs, &vocab, &cfg, &NullClock).unwrap();
        let after = evaluate(&out.model, &seqs).unwrap().nll;
        assert!(after > before, "nll before {before}, after {after}");
    }

    #[test]
    fn hard_mode_budget_accounting_is_exact() {
        let params = DataParams {
            num_entities: 10,
            qa_per_entity: 2,
            forget_fraction: 0.2,
            seed: 13,
        };
        let (ds, vocab) = crate::datagen::generate(&params).unwrap();
        let target = tiny_model(vocab.size(), 9);
        let mut cfg = cfg_for(&target, UnlearnMethod::Ga, 31);
        cfg.epochs = 3;
        cfg.weighting = WeightingMode::Hard;
        cfg.r = 0.2;
        let forget = ds.forget();
        let out = unlearn(&target, &forget, &ds.retain(), &vocab, &cfg, &NullClock).unwrap();
        let per_epoch: u64 = forget
            .iter()
            .map(|s| crate::attribution::selection_size(s.len() - 1, cfg.r) as u64)
            .sum();
        assert_eq!(out.report.token_update_count, 3 * per_epoch);
    }

    #[test]
    fn nan_loss_rolls_back_to_the_last_snapshot() {
        let params = DataParams {
            num_entities: 10,
            qa_per_entity: 2,
            forget_fraction: 0.2,
            seed: 17,
        };
        let (ds, vocab) = crate::datagen::generate(&params).unwrap();
        let target = tiny_model(vocab.size(), 10);
        let mut cfg = cfg_for(&target, UnlearnMethod::Ga, 32);
        cfg.epochs = 50;
        cfg.learning_rate = 1e160; // overflow the squared activations quickly
        cfg.weighting = WeightingMode::Uniform;
        let out = unlearn(&target, &ds.forget(), &ds.retain(), &vocab, &cfg, &NullClock)
            .unwrap();
        assert!(out.report.aborted_at_step.is_some());
        assert!(out.model.params().iter().all(|p| p.is_finite()));
    }
}
