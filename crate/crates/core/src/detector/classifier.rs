//! Pool, one tanh hidden layer, sigmoid.
//!
//! The input image `[C, H, W]` is average-pooled to `[C, 16, 16]` with
//! adaptive bins, flattened, standardised with fixed per-feature statistics
//! (fitted once on training data), and fed through `tanh(W1 f + b1)` then
//! `sigmoid(w2 . h + b2)`. Parameters are `f64`; trained parameters are rounded
//! to `f32` so that saving loses nothing.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm_f64, norm2, Op};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::tensorio::{read_tensor, write_tensor};

pub const ARCHITECTURE: &str = "avgpool16-tanh64-sigmoid";
pub const POOL_SIZE: usize = 16;
pub const HIDDEN_WIDTH: usize = 64;

/// Adaptive average pooling of `[C, H, W]` to `[C, out, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    channels: usize,
    h: usize,
    w: usize,
    out: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

fn bins(n: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| (i * n / out, ((i + 1) * n).div_ceil(out)))
        .collect()
}

impl Pool {
    pub fn new(input_dims: [usize; 3], out: usize) -> Result<Self> {
        let [channels, h, w] = input_dims;
        if channels == 0 || h == 0 || w == 0 || out == 0 {
            return Err(Error::invalid("pool dims must be positive"));
        }
        Ok(Self {
            channels,
            h,
            w,
            out,
            rows: bins(h, out),
            cols: bins(w, out),
        })
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out * self.out
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    pub fn apply(&self, x: &[f32], dst: &mut [f64]) {
        assert_eq!(x.len(), self.input_len());
        assert_eq!(dst.len(), self.output_len());
        let plane = self.h * self.w;
        let mut k = 0;
        for c in 0..self.channels {
            let src = &x[c * plane..(c + 1) * plane];
            for &(r0, r1) in &self.rows {
                for &(c0, c1) in &self.cols {
                    let mut s = 0.0f64;
                    for r in r0..r1 {
                        s += src[r * self.w + c0..r * self.w + c1].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    dst[k] = s / ((r1 - r0) * (c1 - c0)) as f64;
                    k += 1;
                }
            }
        }
    }

    /// Upper bound on the spectral norm, `sqrt(|P|_1 |P|_inf)`; exact when
    /// bins do not overlap and have equal size.
    pub fn norm_bound(&self) -> f64 {
        let col_sum = |bins: &[(usize, usize)], n: usize| {
            (0..n)
                .map(|i| {
                    bins.iter()
                        .filter(|&&(a, b)| a <= i && i < b)
                        .map(|&(a, b)| 1.0 / (b - a) as f64)
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        };
        (col_sum(&self.rows, self.h) * col_sum(&self.cols, self.w)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    input_dims: [usize; 3],
    seed: u64,
    pool: Pool,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// `hidden x features`, row-major.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    architecture: String,
    input_dims: [usize; 3],
    pool: usize,
    hidden: usize,
    seed: u64,
    #[serde(default)]
    plan_hash: Option<String>,
}

/// Per-row intermediates of a batched forward pass.
pub(crate) struct Forward {
    pub normalized: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Classifier {
    /// All-zero parameters: every input scores exactly 0.5.
    pub fn zeros(input_dims: [usize; 3]) -> Result<Self> {
        let pool = Pool::new(input_dims, POOL_SIZE)?;
        let f = pool.output_len();
        Ok(Self {
            input_dims,
            seed: 0,
            pool,
            mean: vec![0.0; f],
            inv_std: vec![1.0; f],
            w1: vec![0.0; HIDDEN_WIDTH * f],
            b1: vec![0.0; HIDDEN_WIDTH],
            w2: vec![0.0; HIDDEN_WIDTH],
            b2: 0.0,
        })
    }

    /// Random first layer (variance `1/fan_in`) and zero output layer, so the
    /// initial score is still 0.5 but gradients reach every parameter.
    pub fn new(input_dims: [usize; 3], seed: u64) -> Result<Self> {
        let mut c = Self::zeros(input_dims)?;
        c.seed = seed;
        let f = c.feature_len();
        let mut rng = stream(seed, &[tag("classifier-init")]);
        let s = (1.0 / f as f64).sqrt();
        for w in &mut c.w1 {
            *w = s * rng.sample::<f64, _>(StandardNormal);
        }
        c.round_to_f32();
        Ok(c)
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_len(&self) -> usize {
        self.pool.output_len()
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    /// Standardisation statistics applied before the first layer.
    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.inv_std)
    }

    /// Sets the input standardisation to the per-feature mean and standard
    /// deviation of `rows` feature vectors.
    pub fn fit_normalization(&mut self, feats: &[f64], rows: usize) -> Result<()> {
        let f = self.feature_len();
        if rows == 0 || feats.len() != rows * f {
            return Err(Error::invalid("normalisation needs whole feature rows"));
        }
        let mut mean = vec![0.0; f];
        for row in feats.chunks_exact(f) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; f];
        for row in feats.chunks_exact(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        self.inv_std = var
            .iter()
            .map(|s| 1.0 / (s / rows as f64).sqrt().max(1e-6))
            .map(|v| v as f32 as f64)
            .collect();
        self.mean = mean.into_iter().map(|v| v as f32 as f64).collect();
        Ok(())
    }

    fn normalize(&self, feats: &[f64]) -> Vec<f64> {
        feats
            .chunks_exact(self.feature_len())
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.inv_std)
                    .map(|((v, m), s)| (v - m) * s)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flattened parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "expected {} finite parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
        Ok(())
    }

    pub(crate) fn round_to_f32(&mut self) {
        let r = |v: &mut f64| *v = *v as f32 as f64;
        self.w1.iter_mut().for_each(r);
        self.b1.iter_mut().for_each(r);
        self.w2.iter_mut().for_each(r);
        r(&mut self.b2);
    }

    /// Pooled feature vector of an image.
    pub fn features(&self, x: &Tensor) -> Result<Vec<f64>> {
        x.expect_dims(&self.input_dims)?;
        let mut f = vec![0.0; self.feature_len()];
        self.pool.apply(x.data(), &mut f);
        Ok(f)
    }

    pub fn logit_features(&self, f: &[f64]) -> f64 {
        let f = self.normalize(f);
        let h: Vec<f64> = self
            .w1
            .chunks_exact(f.len())
            .zip(&self.b1)
            .map(|(row, b)| (dot(row, &f) + b).tanh())
            .collect();
        dot(&self.w2, &h) + self.b2
    }

    pub fn predict_features(&self, f: &[f64]) -> f64 {
        sigmoid(self.logit_features(f))
    }

    pub fn predict(&self, x: &Tensor) -> Result<f64> {
        Ok(self.predict_features(&self.features(x)?))
    }

    /// Forward pass over `rows` feature vectors stored back to back.
    pub(crate) fn forward(&self, feats: &[f64], rows: usize) -> Forward {
        let f = self.feature_len();
        let hw = self.b1.len();
        let normalized = self.normalize(feats);
        let mut hidden = vec![0.0; rows * hw];
        for r in 0..rows {
            hidden[r * hw..(r + 1) * hw].copy_from_slice(&self.b1);
        }
        gemm_f64(rows, f, hw, 1.0, &normalized, Op::N, &self.w1, Op::T, 1.0, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let probs = hidden
            .chunks_exact(hw)
            .map(|h| sigmoid(dot(&self.w2, h) + self.b2))
            .collect();
        Forward {
            normalized,
            hidden,
            probs,
        }
    }

    /// Gradient of a loss with respect to all parameters, given
    /// `dl_dlogit` per row of a previous [`forward`](Self::forward).
    pub(crate) fn backward(&self, fwd: &Forward, dl_dlogit: &[f64]) -> Vec<f64> {
        let f = self.feature_len();
        let hw = self.b1.len();
        let rows = dl_dlogit.len();
        let mut grad = vec![0.0; self.param_count()];
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(hw);
        let (gw2, gb2) = rest.split_at_mut(hw);
        let mut dpre = vec![0.0; rows * hw];
        for r in 0..rows {
            let g = dl_dlogit[r];
            let h = &fwd.hidden[r * hw..(r + 1) * hw];
            gb2[0] += g;
            for k in 0..hw {
                gw2[k] += g * h[k];
                let d = g * self.w2[k] * (1.0 - h[k] * h[k]);
                dpre[r * hw + k] = d;
                gb1[k] += d;
            }
        }
        gemm_f64(hw, rows, f, 1.0, &dpre, Op::T, &fwd.normalized, Op::N, 0.0, gw1);
        grad
    }

    /// Lipschitz bound of `x -> predict(x)` in the Euclidean norm:
    /// `|w2| |W1|_2 max(inv_std) |pool|_2 / 4`.
    pub fn lipschitz_bound(&self) -> f64 {
        let f = self.feature_len();
        let hw = self.b1.len();
        let mut gram = vec![0.0; hw * hw];
        gemm_f64(hw, f, hw, 1.0, &self.w1, Op::N, &self.w1, Op::T, 0.0, &mut gram);
        let top = SymmetricEigen::new(DMatrix::from_row_slice(hw, hw, &gram))
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        let scale = self.inv_std.iter().copied().fold(0.0, f64::max);
        0.25 * norm2(&self.w2) * top.sqrt() * scale * self.pool.norm_bound()
    }

    pub fn save(&self, dir: &Path, plan_hash: Option<String>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let hw = self.b1.len();
        write_tensor(&Tensor::new(vec![hw, self.feature_len()], f32s(&self.w1))?, dir.join("w1.fgt"))?;
        write_tensor(&Tensor::new(vec![hw], f32s(&self.b1))?, dir.join("b1.fgt"))?;
        write_tensor(&Tensor::new(vec![hw], f32s(&self.w2))?, dir.join("w2.fgt"))?;
        write_tensor(&Tensor::new(vec![1], vec![self.b2 as f32])?, dir.join("b2.fgt"))?;
        let f = self.feature_len();
        write_tensor(&Tensor::new(vec![f], f32s(&self.mean))?, dir.join("mean.fgt"))?;
        write_tensor(&Tensor::new(vec![f], f32s(&self.inv_std))?, dir.join("inv_std.fgt"))?;
        let side = Sidecar {
            architecture: ARCHITECTURE.into(),
            input_dims: self.input_dims,
            pool: POOL_SIZE,
            hidden: hw,
            seed: self.seed,
            plan_hash,
        };
        let path = dir.join("classifier.json");
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("classifier.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        if side.architecture != ARCHITECTURE || side.pool != POOL_SIZE || side.hidden != HIDDEN_WIDTH {
            return Err(Error::invalid(format!(
                "unsupported classifier architecture `{}` (pool {}, hidden {})",
                side.architecture, side.pool, side.hidden
            )));
        }
        let mut c = Self::zeros(side.input_dims)?;
        c.seed = side.seed;
        let load = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
            let t = read_tensor(dir.join(name))?;
            t.expect_dims(dims)?;
            Ok(t.to_f64())
        };
        let f = c.feature_len();
        c.w1 = load("w1.fgt", &[HIDDEN_WIDTH, f])?;
        c.b1 = load("b1.fgt", &[HIDDEN_WIDTH])?;
        c.w2 = load("w2.fgt", &[HIDDEN_WIDTH])?;
        c.b2 = load("b2.fgt", &[1])?[0];
        c.mean = load("mean.fgt", &[f])?;
        c.inv_std = load("inv_std.fgt", &[f])?;
        Ok(c)
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}
