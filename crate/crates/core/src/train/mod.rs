//! Pairwise ranking optimisation with Adam, validation and best-checkpoint tracking.

mod adam;
mod loss;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use loss::{Hinge, Logistic, LossFactory, LossRegistry, PairwiseLoss};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, PaddedList};
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, recall_at_k, score_lists};
use crate::model::RankingModel;
use crate::tensor::{Gradients, Graph, ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: String,
    pub margin: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    /// Maximum number of pairs per batch; whole lists are packed.
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many steps; 0 validates at the end of each epoch.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: "hinge".into(),
            margin: 1.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            epochs: 10,
            batch_size: 50,
            seed: 1,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that a run can be checked to
    /// leave parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("train.{m}")));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.clip_norm >= 0.0 && self.margin.is_finite()) {
            return fail("clip_norm must be >= 0 and margin finite".into());
        }
        LossRegistry::<f64>::builtin().build(&self.loss, self.margin)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }
}

/// Mean pair loss of a batch and its parameter gradients. Lists are
/// processed in batch order, one graph each, so accumulation is deterministic.
pub fn batch_gradients<S: Scalar>(
    model: &RankingModel<S>,
    lists: &[PaddedList],
    batch: &Batch,
    loss: &dyn PairwiseLoss<S>,
) -> Result<(f64, Gradients<S>)> {
    let mut grads = Gradients::empty(&model.params);
    let total = batch.pairs.len().max(1) as f64;
    let mut sum = 0.0;
    for &l in &batch.lists {
        let list = &lists[l];
        let mut g = Graph::new(&model.params);
        let scores = model.network.score_list(&mut g, list)?;
        let terms = list
            .pairs()
            .map(|(pos, neg)| loss.node(&mut g, scores[pos], scores[neg]))
            .collect::<Result<Vec<_>>>()?;
        let joined = g.concat(&terms, 1)?;
        let list_loss = g.sum(joined);
        let scaled = g.scale(list_loss, S::of(1.0 / total));
        sum += g.value(list_loss).item().as_f64();
        g.backward(scaled)?;
        grads.merge(&g.param_gradients());
    }
    Ok((sum / total, grads))
}

/// Mean pair loss over `lists` without gradients.
pub fn mean_pair_loss<S: Scalar>(
    model: &RankingModel<S>,
    lists: &[PaddedList],
    loss: &dyn PairwiseLoss<S>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let s = model.scores(list)?;
        for (pos, neg) in list.pairs() {
            sum += loss.value(s[pos], s[neg]);
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub step: u64,
    pub epoch: usize,
    pub r10_1: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    /// Mean pair loss of every step.
    pub losses: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
    /// Highest validation R10@1 (earliest on ties); its parameters are left in the model.
    pub best: Option<Evaluation>,
}

/// Trains `model` in place.
///
/// Every step writes `step=.. epoch=.. loss=.. grad_norm=..` to `log`, every
/// validation writes `step=.. epoch=.. valid_r10_1=.. valid_map=..`. When
/// `valid` is non-empty the best-scoring parameters are restored at the end
/// and, if `best_path` is set, saved there on each improvement; otherwise the
/// final parameters are saved.
pub fn train<S: Scalar>(
    model: &mut RankingModel<S>,
    train_lists: &[PaddedList],
    valid: &[PaddedList],
    cfg: &TrainConfig,
    log: &mut dyn Write,
    best_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_lists.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let loss = LossRegistry::<S>::builtin().build(&cfg.loss, cfg.margin)?;
    let adam = cfg.adam();
    let mut state = AdamState::new(&model.params);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcome = TrainOutcome {
        steps: 0,
        losses: Vec::new(),
        evaluations: Vec::new(),
        best: None,
    };
    let mut best_params: Option<ParamStore<S>> = None;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train_lists, cfg.batch_size, seeds.gen());
        let last = batches.len();
        for (b, batch) in batches.iter().enumerate() {
            let (mean, mut grads) = batch_gradients(model, train_lists, batch, loss.as_ref())?;
            let step = outcome.steps + 1;
            if !mean.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            let norm = adam_step(&mut model.params, &mut grads, &mut state, &adam)
                .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
            outcome.steps = step;
            outcome.losses.push(mean);
            writeln!(log, "step={step} epoch={epoch} loss={mean} grad_norm={norm}")?;

            let due = if cfg.eval_every == 0 { b + 1 == last } else { step.is_multiple_of(cfg.eval_every) };
            if due && !valid.is_empty() {
                let scored = score_lists(model, valid)?;
                let ev = Evaluation {
                    step,
                    epoch,
                    r10_1: recall_at_k(&scored, 1),
                    map: mean_average_precision(&scored),
                };
                writeln!(
                    log,
                    "step={step} epoch={epoch} valid_r10_1={} valid_map={}",
                    ev.r10_1, ev.map
                )?;
                outcome.evaluations.push(ev);
                if outcome.best.is_none_or(|b| ev.r10_1 > b.r10_1) {
                    outcome.best = Some(ev);
                    best_params = Some(model.params.clone());
                    if let Some(p) = best_path {
                        model.save(p)?;
                    }
                }
            }
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    } else if let Some(path) = best_path {
        model.save(path)?;
    }
    Ok(outcome)
}
