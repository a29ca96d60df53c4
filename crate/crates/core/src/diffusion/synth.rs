//! Synthetic clean latents with a binary semantic label.
//!
//! A clean latent is
//!
//! ```text
//! z0[c] = offset[c] + G[c] + label * amplitude * weight[c] * P
//! P(i, j) = (1 + cos(2 pi i / H) cos(2 pi j / W)) / 2
//! ```
//!
//! `G` is a zero-mean, zero-DC smooth Gaussian field (white noise shaped by a
//! Gaussian spectral envelope of width `field_bandwidth` cycles per image and
//! rescaled to per-pixel standard deviation `field_std`). `P` occupies only
//! the DC bin and the four `(+-1, +-1)` bins, so it survives a low-pass filter
//! while the diffusion noise added later is broadband. The label-0 and label-1
//! latents of the same seed differ by exactly the injected pattern.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::Fft2;
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Per-channel latent mean; cycled if shorter than the channel count.
    pub offsets: Vec<f64>,
    pub field_std: f64,
    pub field_bandwidth: f64,
    pub pattern_amplitude: f64,
    /// Per-channel pattern weights; cycled like `offsets`.
    pub pattern_weights: Vec<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            offsets: vec![1.2, -0.9, 1.05, 0.75],
            field_std: 0.6,
            field_bandwidth: 1.5,
            pattern_amplitude: 0.45,
            pattern_weights: vec![1.2, -0.9, 1.05, 0.75],
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.pattern_weights.is_empty() {
            return Err(Error::invalid("offsets and pattern weights must be nonempty"));
        }
        let finite = |v: f64| v.is_finite();
        if !self.offsets.iter().chain(&self.pattern_weights).all(|&v| finite(v))
            || !(self.field_std >= 0.0 && finite(self.field_std))
            || !(self.field_bandwidth > 0.0 && finite(self.field_bandwidth))
            || !finite(self.pattern_amplitude)
        {
            return Err(Error::invalid("synthetic parameters must be finite and nonnegative where required"));
        }
        Ok(())
    }
}

/// Signed frequency of FFT bin `k` on an axis of length `n`.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// The unscaled semantic pattern `P` on an `h x w` plane.
pub fn pattern_plane(h: usize, w: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(h * w);
    for i in 0..h {
        let ci = (2.0 * std::f64::consts::PI * i as f64 / h as f64).cos();
        for j in 0..w {
            let cj = (2.0 * std::f64::consts::PI * j as f64 / w as f64).cos();
            p.push(0.5 * (1.0 + ci * cj));
        }
    }
    p
}

/// The full label-1 increment `amplitude * weight[c] * P`.
pub fn injected_pattern(dims: [usize; 3], params: &SynthParams) -> Result<Tensor> {
    let [c, h, w] = dims;
    let plane = pattern_plane(h, w);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let wgt = params.pattern_amplitude * params.pattern_weights[ch % params.pattern_weights.len()];
        data.extend(plane.iter().map(|&p| (wgt * p) as f32));
    }
    Tensor::new(dims.to_vec(), data)
}

fn smooth_field<R: Rng>(rng: &mut R, h: usize, w: usize, std: f64, bandwidth: f64, fft: &Fft2) -> Vec<f64> {
    let mut env = Vec::with_capacity(h * w);
    for ku in 0..h {
        let fu = signed_freq(ku, h);
        for kv in 0..w {
            let fv = signed_freq(kv, w);
            let r2 = fu * fu + fv * fv;
            env.push(if r2 == 0.0 {
                0.0
            } else {
                (-0.5 * r2 / (bandwidth * bandwidth)).exp()
            });
        }
    }
    let mean_sq = env.iter().map(|e| e * e).sum::<f64>() / env.len() as f64;
    if mean_sq == 0.0 {
        return vec![0.0; h * w];
    }
    let scale = std / mean_sq.sqrt();
    let mut buf: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    fft.forward(&mut buf);
    for (b, e) in buf.iter_mut().zip(&env) {
        *b *= *e;
    }
    fft.inverse(&mut buf);
    buf.iter().map(|c| c.re * scale).collect()
}

/// Clean latent for `(seed, label)`; the field depends on `seed` only.
pub fn synth_instance(seed: u64, label: u8, dims: [usize; 3], params: &SynthParams) -> Result<(Tensor, u8)> {
    if label > 1 {
        return Err(Error::invalid(format!("label {label} not in {{0,1}}")));
    }
    let [c, h, w] = dims;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::invalid("latent dims must be positive"));
    }
    params.validate()?;
    let fft = Fft2::new(h, w);
    let mut rng = stream(seed, &[tag("field")]);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let off = params.offsets[ch % params.offsets.len()];
        let field = smooth_field(&mut rng, h, w, params.field_std, params.field_bandwidth, &fft);
        data.extend(field.into_iter().map(|g| (off + g) as f32));
    }
    let mut z0 = Tensor::new(dims.to_vec(), data)?;
    if label == 1 {
        z0 = z0.add(&injected_pattern(dims, params)?)?;
    }
    Ok((z0, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let p = SynthParams::default();
        let a = synth_instance(11, 1, [4, 16, 16], &p).unwrap();
        let b = synth_instance(11, 1, [4, 16, 16], &p).unwrap();
        assert_eq!(a, b);
        let c = synth_instance(12, 1, [4, 16, 16], &p).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn label_difference_is_the_pattern() {
        let p = SynthParams::default();
        let (z0, _) = synth_instance(5, 0, [4, 16, 16], &p).unwrap();
        let (z1, _) = synth_instance(5, 1, [4, 16, 16], &p).unwrap();
        let pat = injected_pattern([4, 16, 16], &p).unwrap();
        let diff = z1.sub(&z0).unwrap();
        assert!(diff.max_abs_diff(&pat) < 1e-6);
    }

    #[test]
    fn field_has_zero_spatial_mean() {
        let p = SynthParams {
            pattern_amplitude: 0.0,
            ..SynthParams::default()
        };
        let (z, _) = synth_instance(3, 0, [4, 16, 16], &p).unwrap();
        for (ch, plane) in z.data().chunks_exact(256).enumerate() {
            let mean: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            assert!((mean - p.offsets[ch]).abs() < 1e-5, "channel {ch} mean {mean}");
        }
        assert!(synth_instance(3, 2, [4, 16, 16], &p).is_err());
    }
}
