//! Affine latent decoding `x = W z + b` and its audit against a nonlinear decoder.
//!
//! Fitting works on augmented latents `zb = [z; 1]` so that `theta = [W b]`
//! solves one least-squares problem:
//!
//! ```text
//! minimise (1/N) sum_i |theta zb_i - x_i|^2 + ridge |theta|^2
//! ```
//!
//! Internally `theta` is kept transposed (`(d_z + 1) x d_x`, row-major), which
//! is the natural layout for the batched products below.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::LatentDecoder;
use crate::error::{Error, Result};
use crate::linalg::{gemm_f32, gemm_f64, median, norm2, Op};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::tensorio::{read_tensor, write_tensor};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH: usize = 128;
/// Pairs sampled per model when fitting from generated data.
pub const DEFAULT_PAIRS_PER_MODEL: usize = 2000;
/// Largest finite-difference Jacobian (entries) the audit will build.
pub const DEFAULT_JACOBIAN_LIMIT: usize = 4 << 20;

/// Relative pivot below which an unregularised Gram matrix counts as singular.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    ClosedForm,
    Gradient,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub method: FitMethod,
    pub ridge: f64,
    pub samples: usize,
    /// Data term of the objective after fitting.
    pub final_loss: Option<f64>,
    /// Full-data objective before the first epoch and after each epoch
    /// (gradient fits only).
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl FitInfo {
    fn manual() -> Self {
        Self {
            method: FitMethod::Manual,
            ridge: 0.0,
            samples: 0,
            final_loss: None,
            loss_history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineDecoder {
    latent_dims: Vec<usize>,
    image_dims: Vec<usize>,
    /// `d_x x d_z`, row-major.
    w: Vec<f32>,
    b: Vec<f32>,
    fit: FitInfo,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    latent_dims: Vec<usize>,
    image_dims: Vec<usize>,
    parameter_count: usize,
    fit: FitInfo,
}

fn product(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::invalid(format!("dims {dims:?} must be nonempty and positive")));
    }
    Ok(dims.iter().product())
}

impl AffineDecoder {
    pub fn new(latent_dims: &[usize], image_dims: &[usize], w: Tensor, b: Tensor) -> Result<Self> {
        let d_z = product(latent_dims)?;
        let d_x = product(image_dims)?;
        w.expect_dims(&[d_x, d_z])?;
        b.expect_dims(&[d_x])?;
        Ok(Self {
            latent_dims: latent_dims.to_vec(),
            image_dims: image_dims.to_vec(),
            w: w.into_data(),
            b: b.into_data(),
            fit: FitInfo::manual(),
        })
    }

    fn from_theta_t(latent_dims: &[usize], image_dims: &[usize], theta_t: &[f64], fit: FitInfo) -> Self {
        let d_z: usize = latent_dims.iter().product();
        let d_x: usize = image_dims.iter().product();
        let mut w = vec![0.0f32; d_x * d_z];
        for j in 0..d_z {
            let row = &theta_t[j * d_x..(j + 1) * d_x];
            for (i, &v) in row.iter().enumerate() {
                w[i * d_z + j] = v as f32;
            }
        }
        let b = theta_t[d_z * d_x..].iter().map(|&v| v as f32).collect();
        Self {
            latent_dims: latent_dims.to_vec(),
            image_dims: image_dims.to_vec(),
            w,
            b,
            fit,
        }
    }

    /// Image dims as `[C, H, W]`.
    pub fn image_dims_array(&self) -> Result<[usize; 3]> {
        <[usize; 3]>::try_from(self.image_dims.as_slice())
            .map_err(|_| Error::invalid(format!("image dims {:?} are not [C, H, W]", self.image_dims)))
    }

    pub fn weight(&self) -> &[f32] {
        &self.w
    }

    pub fn bias(&self) -> &[f32] {
        &self.b
    }

    pub fn fit_info(&self) -> &FitInfo {
        &self.fit
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Decodes `batch` flattened latents into `batch x d_x` images.
    pub fn decode_flat(&self, latents: &[f32], batch: usize) -> Vec<f32> {
        let (d_z, d_x) = (self.latent_len(), self.image_len());
        assert_eq!(latents.len(), batch * d_z);
        let mut out = Vec::with_capacity(batch * d_x);
        for _ in 0..batch {
            out.extend_from_slice(&self.b);
        }
        gemm_f32(batch, d_z, d_x, 1.0, latents, Op::N, &self.w, Op::T, 1.0, &mut out);
        out
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        z.expect_dims(&self.latent_dims)?;
        Tensor::new(self.image_dims.clone(), self.decode_flat(z.data(), 1))
    }

    pub fn decode_batch(&self, zs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut flat = Vec::with_capacity(zs.len() * self.latent_len());
        for z in zs {
            z.expect_dims(&self.latent_dims)?;
            flat.extend_from_slice(z.data());
        }
        self.decode_flat(&flat, zs.len())
            .chunks_exact(self.image_len())
            .map(|c| Tensor::new(self.image_dims.clone(), c.to_vec()))
            .collect()
    }

    /// Mean squared residual norm over `pairs` (the data term of the objective).
    pub fn objective(&self, pairs: &[(Tensor, Tensor)]) -> Result<f64> {
        let mut total = 0.0;
        for (z, x) in pairs {
            x.expect_dims(&self.image_dims)?;
            let pred = self.decode(z)?;
            total += pred
                .data()
                .iter()
                .zip(x.data())
                .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
                .sum::<f64>();
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    /// Writes `W.fgt`, `b.fgt` and `decoder.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (d_x, d_z) = (self.image_len(), self.latent_len());
        write_tensor(&Tensor::new(vec![d_x, d_z], self.w.clone())?, dir.join("W.fgt"))?;
        write_tensor(&Tensor::new(vec![d_x], self.b.clone())?, dir.join("b.fgt"))?;
        let side = Sidecar {
            latent_dims: self.latent_dims.clone(),
            image_dims: self.image_dims.clone(),
            parameter_count: self.parameter_count(),
            fit: self.fit.clone(),
        };
        let path = dir.join("decoder.json");
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("decoder.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut dec = Self::new(
            &side.latent_dims,
            &side.image_dims,
            read_tensor(dir.join("W.fgt"))?,
            read_tensor(dir.join("b.fgt"))?,
        )?;
        dec.fit = side.fit;
        Ok(dec)
    }
}

impl LatentDecoder for AffineDecoder {
    fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    fn image_dims(&self) -> &[usize] {
        &self.image_dims
    }

    fn decode_f64(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.jvp(z, z);
        for (v, &b) in x.iter_mut().zip(&self.b) {
            *v += b as f64;
        }
        x
    }

    fn jvp(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.latent_len())
            .map(|row| row.iter().zip(v).map(|(&a, &x)| a as f64 * x).sum())
            .collect()
    }
}

/// Augmented design `N x (d_z + 1)` and targets `N x d_x`, both f64.
struct Design {
    latent_dims: Vec<usize>,
    image_dims: Vec<usize>,
    n: usize,
    za: Vec<f64>,
    x: Vec<f64>,
}

impl Design {
    fn new(pairs: &[(Tensor, Tensor)]) -> Result<Self> {
        let (z0, x0) = pairs
            .first()
            .ok_or_else(|| Error::invalid("need at least one (latent, image) pair"))?;
        let latent_dims = z0.dims().to_vec();
        let image_dims = x0.dims().to_vec();
        let (d_z, d_x) = (product(&latent_dims)?, product(&image_dims)?);
        let mut za = Vec::with_capacity(pairs.len() * (d_z + 1));
        let mut x = Vec::with_capacity(pairs.len() * d_x);
        for (z, t) in pairs {
            z.expect_dims(&latent_dims)?;
            t.expect_dims(&image_dims)?;
            za.extend(z.data().iter().map(|&v| v as f64));
            za.push(1.0);
            x.extend(t.data().iter().map(|&v| v as f64));
        }
        Ok(Self {
            latent_dims,
            image_dims,
            n: pairs.len(),
            za,
            x,
        })
    }

    fn d_a(&self) -> usize {
        self.za.len() / self.n
    }

    fn d_x(&self) -> usize {
        self.x.len() / self.n
    }

    /// `(1/N) za^T za`.
    fn gram(&self) -> Vec<f64> {
        let d_a = self.d_a();
        let mut g = vec![0.0; d_a * d_a];
        gemm_f64(d_a, self.n, d_a, 1.0 / self.n as f64, &self.za, Op::T, &self.za, Op::N, 0.0, &mut g);
        g
    }

    /// Data term `(1/N) sum |theta zb_i - x_i|^2` for a transposed theta.
    fn loss(&self, theta_t: &[f64]) -> f64 {
        const CHUNK: usize = 256;
        let (d_a, d_x) = (self.d_a(), self.d_x());
        let mut total = 0.0;
        let mut pred = vec![0.0; CHUNK * d_x];
        for start in (0..self.n).step_by(CHUNK) {
            let m = CHUNK.min(self.n - start);
            let p = &mut pred[..m * d_x];
            p.copy_from_slice(&self.x[start * d_x..(start + m) * d_x]);
            gemm_f64(m, d_a, d_x, 1.0, &self.za[start * d_a..], Op::N, theta_t, Op::N, -1.0, p);
            total += p.iter().map(|v| v * v).sum::<f64>();
        }
        total / self.n as f64
    }
}

fn check_ridge(ridge: f64) -> Result<()> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge {ridge} must be finite and >= 0")));
    }
    Ok(())
}

/// Least-squares fit through the normal equations (Cholesky).
pub fn fit_closed_form(pairs: &[(Tensor, Tensor)], ridge: f64) -> Result<AffineDecoder> {
    check_ridge(ridge)?;
    let d = Design::new(pairs)?;
    let (d_a, d_x) = (d.d_a(), d.d_x());
    let mut g = d.gram();
    for i in 0..d_a {
        g[i * d_a + i] += ridge;
    }
    let mut rhs = vec![0.0; d_a * d_x];
    gemm_f64(d_a, d.n, d_x, 1.0 / d.n as f64, &d.za, Op::T, &d.x, Op::N, 0.0, &mut rhs);

    let scale = (0..d_a).map(|i| g[i * d_a + i]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let chol = nalgebra::linalg::Cholesky::new(DMatrix::from_row_slice(d_a, d_a, &g));
    let chol = match chol {
        Some(c) => c,
        None => return Err(Error::RankDeficient { min_pivot: 0.0 }),
    };
    let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if ridge == 0.0 && min_pivot < PIVOT_TOL * scale {
        return Err(Error::RankDeficient { min_pivot });
    }
    let sol = chol.solve(&DMatrix::from_row_slice(d_a, d_x, &rhs));
    // nalgebra is column-major; bring the solution back to row-major.
    let theta_t: Vec<f64> = sol.transpose().as_slice().to_vec();
    let fit = FitInfo {
        method: FitMethod::ClosedForm,
        ridge,
        samples: d.n,
        final_loss: Some(d.loss(&theta_t)),
        loss_history: Vec::new(),
    };
    Ok(AffineDecoder::from_theta_t(&d.latent_dims, &d.image_dims, &theta_t, fit))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientFitOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for GradientFitOptions {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            ridge: DEFAULT_RIDGE,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

/// Mini-batch gradient descent from a zero initialisation.
///
/// A batch at least as large as the data set gives full-batch descent.
pub fn fit_gradient(pairs: &[(Tensor, Tensor)], opts: &GradientFitOptions) -> Result<AffineDecoder> {
    check_ridge(opts.ridge)?;
    if !(opts.lr > 0.0 && opts.lr.is_finite()) || opts.batch == 0 {
        return Err(Error::invalid("learning rate must be positive and batch nonzero"));
    }
    let d = Design::new(pairs)?;
    let (d_a, d_x) = (d.d_a(), d.d_x());
    let mut theta_t = vec![0.0; d_a * d_x];
    let mut history = vec![d.loss(&theta_t)];
    let mut order: Vec<usize> = (0..d.n).collect();
    let mut rng = stream(opts.seed, &[tag("affine-sgd")]);
    let bsz = opts.batch.min(d.n);
    let mut zb = vec![0.0; bsz * d_a];
    let mut resid = vec![0.0; bsz * d_x];
    let mut grad = vec![0.0; d_a * d_x];

    for epoch in 1..=opts.epochs {
        if bsz < d.n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(bsz) {
            let m = chunk.len();
            for (k, &i) in chunk.iter().enumerate() {
                zb[k * d_a..(k + 1) * d_a].copy_from_slice(&d.za[i * d_a..(i + 1) * d_a]);
                resid[k * d_x..(k + 1) * d_x].copy_from_slice(&d.x[i * d_x..(i + 1) * d_x]);
            }
            let r = &mut resid[..m * d_x];
            gemm_f64(m, d_a, d_x, 1.0, &zb, Op::N, &theta_t, Op::N, -1.0, r);
            // grad = (2/m) zb^T r + 2 ridge theta
            grad.copy_from_slice(&theta_t);
            gemm_f64(d_a, m, d_x, 2.0 / m as f64, &zb, Op::T, r, Op::N, 2.0 * opts.ridge, &mut grad);
            for (t, g) in theta_t.iter_mut().zip(&grad) {
                *t -= opts.lr * g;
            }
        }
        let loss = d.loss(&theta_t);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        history.push(loss);
    }
    let fit = FitInfo {
        method: FitMethod::Gradient,
        ridge: opts.ridge,
        samples: d.n,
        final_loss: history.last().copied(),
        loss_history: history,
    };
    Ok(AffineDecoder::from_theta_t(&d.latent_dims, &d.image_dims, &theta_t, fit))
}

/// The Gram matrix `(1/N) sum zb zb^T` (row-major, `(d_z + 1)^2`).
pub fn gram_matrix(latents: &[Tensor]) -> Result<Vec<f64>> {
    let first = latents
        .first()
        .ok_or_else(|| Error::invalid("need at least one latent"))?;
    let d_z = first.len();
    let d_a = d_z + 1;
    let mut za = Vec::with_capacity(latents.len() * d_a);
    for z in latents {
        z.expect_dims(first.dims())?;
        za.extend(z.data().iter().map(|&v| v as f64));
        za.push(1.0);
    }
    let mut g = vec![0.0; d_a * d_a];
    gemm_f64(d_a, latents.len(), d_a, 1.0 / latents.len() as f64, &za, Op::T, &za, Op::N, 0.0, &mut g);
    Ok(g)
}

/// Eigenvalues of a symmetric row-major matrix, ascending.
pub fn symmetric_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest eigenvalue of the objective's Gram factor.
pub fn hessian_psd_check(pairs: &[(Tensor, Tensor)]) -> Result<f64> {
    let latents: Vec<Tensor> = pairs.iter().map(|(z, _)| z.clone()).collect();
    min_gram_eigenvalue(&latents)
}

pub fn min_gram_eigenvalue(latents: &[Tensor]) -> Result<f64> {
    let g = gram_matrix(latents)?;
    let n = latents[0].len() + 1;
    Ok(symmetric_eigenvalues(&g, n)[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub probes: usize,
    /// Per-coordinate standard deviation of probe latents around the centre.
    pub radius: f64,
    /// Probe centre; zero when absent.
    pub center: Option<Vec<f64>>,
    /// Perturbation length for the Taylor-ratio estimate.
    pub taylor_delta: f64,
    /// Consecutive probe pairs used for the Jacobian-Lipschitz estimate; 0 skips it.
    pub jacobian_pairs: usize,
    pub jacobian_limit: usize,
    pub fd_step: f64,
    /// Lipschitz constant of a downstream classifier, if any.
    pub classifier_lipschitz: Option<f64>,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            probes: 100,
            radius: 1.0,
            center: None,
            taylor_delta: 0.05,
            jacobian_pairs: 2,
            jacobian_limit: DEFAULT_JACOBIAN_LIMIT,
            fd_step: 1e-3,
            classifier_lipschitz: None,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub probes: usize,
    pub mean_residual: f64,
    pub median_residual: f64,
    pub max_residual: f64,
    /// Estimated Lipschitz constant of the reference Jacobian.
    pub beta_hat: Option<f64>,
    /// Median of `r(2 delta) / r(delta)`; absent when the reference is affine
    /// to numerical precision.
    pub taylor_ratio: Option<f64>,
    /// `L_f * max residual` when a classifier constant was supplied.
    pub classifier_bound: Option<f64>,
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v = gaussian(rng, n);
    let s = norm2(&v).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Norm of the first-order Taylor remainder `D(z + d u) - D(z) - d J(z) u`.
pub fn taylor_residual(dec: &dyn LatentDecoder, z: &[f64], u: &[f64], delta: f64) -> f64 {
    let moved: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + delta * b).collect();
    let base = dec.decode_f64(z);
    let jv = dec.jvp(z, u);
    let out = dec.decode_f64(&moved);
    let r: Vec<f64> = out
        .iter()
        .zip(&base)
        .zip(&jv)
        .map(|((o, b), j)| o - b - delta * j)
        .collect();
    norm2(&r)
}

/// Central finite-difference Jacobian, `d_x x d_z` row-major.
pub fn fd_jacobian(dec: &dyn LatentDecoder, z: &[f64], step: f64, limit: usize) -> Result<Vec<f64>> {
    let (d_z, d_x) = (dec.latent_len(), dec.image_len());
    if d_x.saturating_mul(d_z) > limit {
        return Err(Error::JacobianTooLarge {
            rows: d_x,
            cols: d_z,
            limit,
        });
    }
    let mut zs = Vec::with_capacity(2 * d_z * d_z);
    for j in 0..d_z {
        for sign in [1.0, -1.0] {
            let mut p = z.to_vec();
            p[j] += sign * step;
            zs.extend(p);
        }
    }
    let out = dec.decode_batch_f64(&zs, 2 * d_z);
    let mut jac = vec![0.0; d_x * d_z];
    for j in 0..d_z {
        let plus = &out[(2 * j) * d_x..(2 * j + 1) * d_x];
        let minus = &out[(2 * j + 1) * d_x..(2 * j + 2) * d_x];
        for i in 0..d_x {
            jac[i * d_z + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Compares an affine decoder with `reference` on random probe latents.
pub fn approximation_report(
    dec: &AffineDecoder,
    reference: &dyn LatentDecoder,
    opts: &ReportOptions,
) -> Result<ApproximationReport> {
    if opts.probes < 10 {
        return Err(Error::invalid("need at least 10 probes"));
    }
    if reference.latent_dims() != dec.latent_dims() || reference.image_dims() != dec.image_dims() {
        return Err(Error::DimMismatch {
            expected: dec.latent_dims().iter().chain(dec.image_dims()).copied().collect(),
            got: reference.latent_dims().iter().chain(reference.image_dims()).copied().collect(),
        });
    }
    if !(opts.radius >= 0.0 && opts.taylor_delta > 0.0 && opts.fd_step > 0.0) {
        return Err(Error::invalid("radius must be >= 0 and taylor delta, fd step > 0"));
    }
    let d_z = dec.latent_len();
    let center = match &opts.center {
        Some(c) if c.len() != d_z => {
            return Err(Error::DimMismatch {
                expected: vec![d_z],
                got: vec![c.len()],
            })
        }
        Some(c) => c.clone(),
        None => vec![0.0; d_z],
    };
    let mut rng = stream(opts.seed, &[tag("audit")]);
    let probes: Vec<Vec<f64>> = (0..opts.probes)
        .map(|_| {
            gaussian(&mut rng, d_z)
                .into_iter()
                .zip(&center)
                .map(|(g, c)| c + opts.radius * g)
                .collect()
        })
        .collect();

    let flat: Vec<f64> = probes.iter().flatten().copied().collect();
    let truth = reference.decode_batch_f64(&flat, probes.len());
    let mut residuals: Vec<f64> = probes
        .iter()
        .zip(truth.chunks_exact(dec.image_len()))
        .map(|(z, t)| {
            let lin = dec.decode_f64(z);
            norm2(&lin.iter().zip(t).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .collect();
    let mean_residual = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let median_residual = median(&mut residuals);

    let mut ratios = Vec::new();
    let mut degenerate = false;
    for z in &probes {
        let u = unit(&mut rng, d_z);
        let r1 = taylor_residual(reference, z, &u, opts.taylor_delta);
        let r2 = taylor_residual(reference, z, &u, 2.0 * opts.taylor_delta);
        let scale = norm2(&reference.jvp(z, &u)) * opts.taylor_delta;
        if r1 <= 1e-10 * scale.max(1.0) {
            degenerate = true;
            break;
        }
        ratios.push(r2 / r1);
    }
    let taylor_ratio = (!degenerate).then(|| median(&mut ratios));

    let beta_hat = if opts.jacobian_pairs == 0 {
        None
    } else {
        let used = (opts.jacobian_pairs + 1).min(probes.len());
        let jacs = probes[..used]
            .iter()
            .map(|z| fd_jacobian(reference, z, opts.fd_step, opts.jacobian_limit))
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0.0f64;
        for k in 1..used {
            let dz: Vec<f64> = probes[k].iter().zip(&probes[k - 1]).map(|(a, b)| a - b).collect();
            let dj: Vec<f64> = jacs[k].iter().zip(&jacs[k - 1]).map(|(a, b)| a - b).collect();
            let den = norm2(&dz);
            if den > 0.0 {
                best = best.max(norm2(&dj) / den);
            }
        }
        Some(best)
    };

    Ok(ApproximationReport {
        probes: opts.probes,
        mean_residual,
        median_residual,
        max_residual,
        beta_hat,
        taylor_ratio,
        classifier_bound: opts.classifier_lipschitz.map(|l| l.abs() * max_residual),
    })
}
