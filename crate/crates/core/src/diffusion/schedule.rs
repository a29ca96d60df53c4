use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TOTAL_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

/// Per-step noise variances `beta_t` for `t = 1..=T` with the derived
/// `alpha_t = 1 - beta_t` and cumulative products `alpha_bar_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    /// Builds a schedule from explicit betas in `[0, 1)`.
    ///
    /// Zero betas are accepted here (identity diffusion); the linear
    /// constructor requires strictly positive ones.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::invalid(format!("beta {b} outside [0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::invalid(format!(
                "diffusion time {t} outside [1, {}]",
                self.total_steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }
}

/// Linear ramp from `beta_min` to `beta_max`, endpoints included.
pub fn make_linear_beta_schedule(
    total_steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<VarianceSchedule> {
    if total_steps == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let betas = if total_steps == 1 {
        vec![beta_min]
    } else {
        let span = (total_steps - 1) as f64;
        (0..total_steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / span)
            .collect()
    };
    VarianceSchedule::from_betas(betas)
}

/// `sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps`, element-wise.
pub fn forward_noise(z0: &Tensor, sched: &VarianceSchedule, t: usize, eps: &Tensor) -> Result<Tensor> {
    eps.expect_dims(z0.dims())?;
    let ab = sched.alpha_bar(t)?;
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| (s * z as f64 + n * e as f64) as f32)
        .collect();
    Tensor::new(z0.dims().to_vec(), data)
}

/// Maps a generation step `s` in `[0, T-1]` to diffusion time `T - s`.
///
/// The last generation step is the least noisy (`t = 1`).
pub fn gen_step_to_diffusion_time(step: usize, total_steps: usize) -> Result<usize> {
    if step >= total_steps {
        return Err(Error::invalid(format!(
            "generation step {step} outside [0, {}]",
            total_steps.saturating_sub(1)
        )));
    }
    Ok(total_steps - step)
}
