//! Staged training from late (clean) to early (noisy) generation steps.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

use super::classifier::Classifier;
use super::features::FeatureSet;
use super::loss::stage_loss_and_grad;

/// Stages used with a 50-step generator, from easiest to hardest.
pub const DEFAULT_STAGES: [[usize; 5]; 4] = [
    [49, 45, 40, 35, 30],
    [45, 40, 35, 30, 25],
    [40, 35, 30, 25, 20],
    [30, 27, 24, 22, 20],
];
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_EPOCHS_PER_STAGE: usize = 4;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Fixed,
    CosineWarmup { warmup_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub stages: Vec<Vec<usize>>,
    pub epochs_per_stage: usize,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    /// Resample each epoch with weights balancing (model, class) groups.
    pub balanced_sampling: bool,
}

/// The default four-stage plan. For `total_steps != 50` the stage steps are
/// rescaled to the same fractions of the trajectory.
pub fn make_default_plan(total_steps: usize) -> Result<CurriculumPlan> {
    if total_steps < 2 {
        return Err(Error::invalid("need at least two generation steps"));
    }
    let stages = DEFAULT_STAGES
        .iter()
        .map(|st| {
            let mut v: Vec<usize> = st
                .iter()
                .map(|&s| ((s as f64) * (total_steps - 1) as f64 / 49.0).round() as usize)
                .collect();
            v.dedup();
            v
        })
        .collect();
    Ok(CurriculumPlan {
        stages,
        epochs_per_stage: DEFAULT_EPOCHS_PER_STAGE,
        lr: DEFAULT_LR,
        lambda: DEFAULT_LAMBDA,
        batch_size: DEFAULT_BATCH_SIZE,
        seed: crate::rng::DEFAULT_SEED,
        optimizer: OptimizerKind::Adamw,
        weight_decay: DEFAULT_WEIGHT_DECAY,
        schedule: LrSchedule::Fixed,
        balanced_sampling: true,
    })
}

impl CurriculumPlan {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("curriculum needs nonempty stages"));
        }
        if let Some(s) = self.stages.iter().flatten().find(|&&s| s >= total_steps) {
            return Err(Error::invalid(format!("stage step {s} outside [0, {}]", total_steps - 1)));
        }
        for st in &self.stages {
            let mut v = st.clone();
            v.sort_unstable();
            v.dedup();
            if v.len() != st.len() {
                return Err(Error::invalid(format!("stage {st:?} repeats a step")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::invalid("learning rate must be positive and batch size nonzero"));
        }
        if !(self.lambda >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("lambda and weight decay must be nonnegative"));
        }
        if let LrSchedule::CosineWarmup { warmup_fraction } = self.schedule {
            if !(0.0..1.0).contains(&warmup_fraction) {
                return Err(Error::invalid("warmup fraction must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Every step used by some stage, ascending.
    pub fn union_steps(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.stages.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Stable fingerprint of the plan, stored next to trained classifiers.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("plan serialises");
        format!("{:016x}", tag(&text))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAccuracy {
    pub step: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch, per stage.
    pub stage_losses: Vec<Vec<f64>>,
    /// Accuracy at threshold 0.5 per step of the evaluation set.
    pub step_accuracy: Vec<StepAccuracy>,
    pub optimizer_steps: usize,
    pub plan_hash: String,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    decay_mask: Vec<bool>,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(g: &Classifier) -> Self {
        let n = g.param_count();
        // decay weights, not biases
        let mut decay_mask = vec![false; n];
        decay_mask[..g.w1.len()].iter_mut().for_each(|d| *d = true);
        let w2 = g.w1.len() + g.b1.len();
        decay_mask[w2..w2 + g.w2.len()].iter_mut().for_each(|d| *d = true);
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            decay_mask,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            if self.decay_mask[i] {
                p[i] -= lr * wd * p[i];
            }
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn lr_at(plan: &CurriculumPlan, step: usize, total: usize) -> f64 {
    match plan.schedule {
        LrSchedule::Fixed => plan.lr,
        LrSchedule::CosineWarmup { warmup_fraction } => {
            let warm = (warmup_fraction * total as f64).ceil() as usize;
            if step < warm {
                plan.lr * (step + 1) as f64 / warm as f64
            } else {
                let span = (total - warm).max(1) as f64;
                let progress = (step - warm) as f64 / span;
                0.5 * plan.lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Per-instance sampling weights, inverse to the size of each (model, class) group.
fn balance_weights(set: &FeatureSet) -> Vec<f64> {
    let mut counts: BTreeMap<(&str, u8), usize> = BTreeMap::new();
    for inst in &set.instances {
        *counts.entry((inst.model_id.as_str(), inst.label)).or_default() += 1;
    }
    set.instances
        .iter()
        .map(|i| 1.0 / counts[&(i.model_id.as_str(), i.label)] as f64)
        .collect()
}

/// Accuracy at threshold 0.5 for every step of `set`.
pub fn step_accuracy(g: &Classifier, set: &FeatureSet) -> Vec<StepAccuracy> {
    set.steps
        .iter()
        .enumerate()
        .map(|(pos, &step)| {
            let all: Vec<usize> = (0..set.len()).collect();
            let batch = set.batch(&all, &[pos]);
            let probs = g.forward(&batch.features, batch.rows()).probs;
            let correct = probs
                .iter()
                .zip(&batch.labels)
                .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
                .count();
            StepAccuracy {
                step,
                accuracy: correct as f64 / set.len().max(1) as f64,
            }
        })
        .collect()
}

/// Trains `init` through every stage of `plan` in order.
///
/// The input standardisation of `init` is replaced by statistics of the
/// training features over every step the plan uses.
/// Accuracy is reported on `validation` when given, else on `train`.
pub fn train_curriculum(
    train: &FeatureSet,
    plan: &CurriculumPlan,
    init: Classifier,
    validation: Option<&FeatureSet>,
) -> Result<(Classifier, TrainReport)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if init.feature_len() != train.feature_len {
        return Err(Error::DimMismatch {
            expected: vec![init.feature_len()],
            got: vec![train.feature_len],
        });
    }
    let max_step = train.steps.iter().copied().max().unwrap_or(0);
    plan.validate(max_step.max(plan.union_steps().last().copied().unwrap_or(0)) + 1)?;
    let stage_positions = plan
        .stages
        .iter()
        .map(|st| train.positions(st))
        .collect::<Result<Vec<_>>>()?;

    let n = train.len();
    let weights = balance_weights(train);
    let sampler = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    let batches_per_epoch = n.div_ceil(plan.batch_size);
    let total_steps = batches_per_epoch * plan.epochs_per_stage * plan.stages.len();

    let mut g = init;
    let all: Vec<usize> = (0..n).collect();
    let every_step: Vec<usize> = stage_positions.iter().flatten().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let stats = train.batch(&all, &every_step);
    g.fit_normalization(&stats.features, stats.rows())?;
    let mut params = g.params();
    let mut adam = AdamW::new(&g);
    let mut step = 0usize;
    let mut stage_losses = Vec::with_capacity(plan.stages.len());

    for (k, positions) in stage_positions.iter().enumerate() {
        let mut epoch_losses = Vec::with_capacity(plan.epochs_per_stage);
        for epoch in 0..plan.epochs_per_stage {
            let mut rng = stream(plan.seed, &[tag("curriculum"), k as u64, epoch as u64]);
            let order: Vec<usize> = if plan.balanced_sampling {
                (0..n).map(|_| sampler.sample(&mut rng)).collect()
            } else {
                let mut o: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut rng);
                o
            };
            let mut total = 0.0;
            for chunk in order.chunks(plan.batch_size) {
                let batch = train.batch(chunk, positions);
                let (loss, grad) = stage_loss_and_grad(&g, &batch, plan.lambda);
                if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { epoch, loss });
                }
                let lr = lr_at(plan, step, total_steps);
                match plan.optimizer {
                    OptimizerKind::Adamw => adam.step(&mut params, &grad, lr, plan.weight_decay),
                    OptimizerKind::Sgd => {
                        for (p, d) in params.iter_mut().zip(&grad) {
                            *p -= lr * d;
                        }
                    }
                }
                g.set_params(&params)?;
                total += loss;
                step += 1;
            }
            epoch_losses.push(total / batches_per_epoch as f64);
        }
        stage_losses.push(epoch_losses);
    }
    g.round_to_f32();
    let report = TrainReport {
        stage_losses,
        step_accuracy: step_accuracy(&g, validation.unwrap_or(train)),
        optimizer_steps: step,
        plan_hash: plan.hash(),
    };
    Ok((g, report))
}
