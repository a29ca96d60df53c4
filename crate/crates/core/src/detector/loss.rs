//! Classification and temporal-consistency losses.

use super::classifier::Classifier;

pub const PROB_CLAMP: f64 = 1e-7;

pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce_loss`] in `p`; zero where the clamp is active.
fn bce_grad(p: f64, y: u8) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    if y == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Mean of `(p_t - p_t')^2` over all ordered pairs, diagonal included.
pub fn consistency_loss(preds: &[f64]) -> f64 {
    let n = preds.len() as f64;
    if preds.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for a in preds {
        for b in preds {
            s += (a - b) * (a - b);
        }
    }
    s / (n * n)
}

/// A stage mini-batch: every instance contributes one feature row per step.
#[derive(Clone, Debug)]
pub struct StageBatch {
    pub steps_per_instance: usize,
    /// `instances * steps_per_instance` rows, instance-major.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl StageBatch {
    pub fn instances(&self) -> usize {
        self.labels.len()
    }

    pub fn rows(&self) -> usize {
        self.labels.len() * self.steps_per_instance
    }
}

fn loss_from_probs(probs: &[f64], batch: &StageBatch, lambda: f64) -> f64 {
    let s = batch.steps_per_instance;
    let mut bce = 0.0;
    let mut cons = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let p = &probs[i * s..(i + 1) * s];
        bce += p.iter().map(|&q| bce_loss(q, y)).sum::<f64>();
        cons += consistency_loss(p);
    }
    bce / batch.rows() as f64 + lambda * cons / batch.instances() as f64
}

/// Mean BCE over instances and steps plus `lambda` times the mean consistency.
pub fn stage_loss(g: &Classifier, batch: &StageBatch, lambda: f64) -> f64 {
    let fwd = g.forward(&batch.features, batch.rows());
    loss_from_probs(&fwd.probs, batch, lambda)
}

/// Loss and its gradient with respect to [`Classifier::params`].
pub fn stage_loss_and_grad(g: &Classifier, batch: &StageBatch, lambda: f64) -> (f64, Vec<f64>) {
    let rows = batch.rows();
    let s = batch.steps_per_instance;
    let fwd = g.forward(&batch.features, rows);
    let loss = loss_from_probs(&fwd.probs, batch, lambda);
    let (n_rows, n_inst) = (rows as f64, batch.instances() as f64);
    let mut dlogit = vec![0.0; rows];
    for (i, &y) in batch.labels.iter().enumerate() {
        let p = &fwd.probs[i * s..(i + 1) * s];
        let mean = p.iter().sum::<f64>() / s as f64;
        for (t, &q) in p.iter().enumerate() {
            // d consistency / d p_t = 4 (p_t - mean) / S
            let dp = bce_grad(q, y) / n_rows + lambda * 4.0 * (q - mean) / (s as f64 * n_inst);
            dlogit[i * s + t] = dp * q * (1.0 - q);
        }
    }
    (loss, g.backward(&fwd, &dlogit))
}
