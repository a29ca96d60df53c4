//! Hard circular low-pass filtering in the 2D Fourier domain.
//!
//! The mask is defined on the DC-centred grid: bin `(u, v)` passes iff its
//! Euclidean distance to `(floor(H/2), floor(W/2))` is at most
//! `r * min(H, W) / 2`. Filtering is applied per channel.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default cutoff ratio used by the detector pipeline.
pub const DEFAULT_CUTOFF_RATIO: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowPassSpec {
    pub cutoff_ratio: f64,
}

impl LowPassSpec {
    pub fn new(cutoff_ratio: f64) -> Result<Self> {
        if !(cutoff_ratio > 0.0 && cutoff_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "cutoff ratio {cutoff_ratio} outside (0, 1]"
            )));
        }
        Ok(Self { cutoff_ratio })
    }

    /// Pixel radius for an `h x w` spectrum.
    pub fn radius(&self, h: usize, w: usize) -> f64 {
        self.cutoff_ratio * h.min(w) as f64 / 2.0
    }

    pub fn center(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }
}

/// Centred `{0, 1}` mask of shape `[h, w]`.
pub fn build_mask(h: usize, w: usize, r: f64) -> Result<Tensor> {
    let spec = LowPassSpec::new(r)?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask dims must be positive"));
    }
    let rad = spec.radius(h, w);
    let (u0, v0) = LowPassSpec::center(h, w);
    let mut data = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let du = u as f64 - u0 as f64;
            let dv = v as f64 - v0 as f64;
            data.push(if du * du + dv * dv <= rad * rad { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![h, w], data)
}

/// Moves a centred `[h, w]` grid to FFT (DC-first) order.
pub fn uncenter(h: usize, w: usize, centred: &[f32]) -> Vec<f32> {
    let (u0, v0) = LowPassSpec::center(h, w);
    let mut out = vec![0.0; h * w];
    for ku in 0..h {
        let u = (ku + u0) % h;
        for kv in 0..w {
            let v = (kv + v0) % w;
            out[ku * w + kv] = centred[u * w + v];
        }
    }
    out
}

/// 2D FFT over row-major `h x w` complex data. The inverse is normalised.
#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("h", &self.h).field("w", &self.w).finish()
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn transpose(src: &[Complex<f64>], rows: usize, cols: usize, dst: &mut [Complex<f64>]) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, true);
        let s = 1.0 / (self.h * self.w) as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        assert_eq!(buf.len(), self.h * self.w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row, &self.col)
        };
        row.process(buf);
        let mut t = vec![Complex::new(0.0, 0.0); buf.len()];
        Self::transpose(buf, self.h, self.w, &mut t);
        col.process(&mut t);
        Self::transpose(&t, self.w, self.h, buf);
    }
}

/// Reusable low-pass filter for a fixed spatial size.
#[derive(Clone, Debug)]
pub struct LowPassFilter {
    h: usize,
    w: usize,
    cutoff_ratio: Option<f64>,
    mask: Vec<f64>,
    fft: Fft2,
}

impl LowPassFilter {
    pub fn new(h: usize, w: usize, r: f64) -> Result<Self> {
        let centred = build_mask(h, w, r)?;
        let mut f = Self::with_mask(h, w, &centred)?;
        f.cutoff_ratio = Some(r);
        Ok(f)
    }

    /// Filter with an arbitrary centred mask (used to build an all-pass filter).
    pub fn with_mask(h: usize, w: usize, centred_mask: &Tensor) -> Result<Self> {
        centred_mask.expect_dims(&[h, w])?;
        let mask = uncenter(h, w, centred_mask.data())
            .into_iter()
            .map(f64::from)
            .collect();
        Ok(Self {
            h,
            w,
            cutoff_ratio: None,
            mask,
            fft: Fft2::new(h, w),
        })
    }

    pub fn cutoff_ratio(&self) -> Option<f64> {
        self.cutoff_ratio
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn spatial_of(&self, x: &Tensor) -> Result<usize> {
        let d = x.dims();
        let (channels, h, w) = match d.len() {
            2 => (1, d[0], d[1]),
            3 => (d[0], d[1], d[2]),
            _ => {
                return Err(Error::invalid(format!(
                    "low-pass input must be [H, W] or [C, H, W], got {d:?}"
                )))
            }
        };
        if (h, w) != (self.h, self.w) {
            return Err(Error::DimMismatch {
                expected: vec![self.h, self.w],
                got: vec![h, w],
            });
        }
        Ok(channels)
    }

    /// Filters every channel; also returns the largest imaginary residue.
    pub fn apply_with_residue(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        self.spatial_of(x)?;
        let mut out = x.data().to_vec();
        let residue = self.apply_slice(&mut out);
        Ok((Tensor::new(x.dims().to_vec(), out)?, residue))
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.apply_with_residue(x)?.0)
    }

    /// Filters channel-major data of `k * h * w` values in place.
    pub fn apply_slice(&self, data: &mut [f32]) -> f64 {
        let plane = self.h * self.w;
        assert_eq!(data.len() % plane, 0, "data is not a whole number of planes");
        let mut buf = vec![Complex::new(0.0, 0.0); plane];
        let mut residue = 0.0f64;
        for ch in data.chunks_exact_mut(plane) {
            for (b, &v) in buf.iter_mut().zip(ch.iter()) {
                *b = Complex::new(v as f64, 0.0);
            }
            self.fft.forward(&mut buf);
            for (b, &m) in buf.iter_mut().zip(&self.mask) {
                *b *= m;
            }
            self.fft.inverse(&mut buf);
            for (o, b) in ch.iter_mut().zip(&buf) {
                *o = b.re as f32;
                residue = residue.max(b.im.abs());
            }
        }
        residue
    }
}

/// One-shot low-pass filter of a `[H, W]` or `[C, H, W]` tensor.
pub fn apply_lpf(x: &Tensor, r: f64) -> Result<Tensor> {
    let d = x.dims();
    let (h, w) = match d.len() {
        2 => (d[0], d[1]),
        3 => (d[1], d[2]),
        _ => {
            return Err(Error::invalid(format!(
                "low-pass input must be [H, W] or [C, H, W], got {d:?}"
            )))
        }
    };
    LowPassFilter::new(h, w, r)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn four_by_four_half_ratio_keeps_five_bins() {
        let m = build_mask(4, 4, 0.5).unwrap();
        let on: Vec<usize> = (0..16).filter(|&i| m.data()[i] == 1.0).collect();
        // (1,2) (2,1) (2,2) (2,3) (3,2)
        assert_eq!(on, vec![6, 9, 10, 11, 14]);
    }

    #[test]
    fn full_ratio_includes_mid_edge_bins() {
        let m = build_mask(8, 8, 1.0).unwrap();
        let at = |u: usize, v: usize| m.data()[u * 8 + v];
        assert_eq!(at(0, 4), 1.0);
        assert_eq!(at(4, 0), 1.0);
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(4, 4), 1.0);
    }

    #[test]
    fn mask_is_conjugate_symmetric() {
        for &(h, w) in &[(4, 4), (5, 7), (8, 6), (9, 9), (32, 32)] {
            for &r in &[0.1, 0.2, 0.5, 0.77, 1.0] {
                let m = build_mask(h, w, r).unwrap();
                let u = uncenter(h, w, m.data());
                for a in 0..h {
                    for b in 0..w {
                        assert_eq!(u[a * w + b], u[((h - a) % h) * w + (w - b) % w]);
                    }
                }
            }
        }
    }

    #[test]
    fn cutoff_out_of_range() {
        assert!(build_mask(4, 4, 0.0).is_err());
        assert!(build_mask(4, 4, 1.5).is_err());
        assert!(apply_lpf(&Tensor::zeros(&[4, 4]).unwrap(), -0.1).is_err());
        assert!(apply_lpf(&Tensor::zeros(&[2, 2, 4, 4]).unwrap(), 0.2).is_err());
    }

    #[test]
    fn constant_image_unchanged() {
        let x = Tensor::filled(&[3, 9, 12], 0.7).unwrap();
        for &r in &[0.05, 0.2, 1.0] {
            let y = apply_lpf(&x, r).unwrap();
            assert!(y.max_abs_diff(&x) < 1e-6);
        }
    }

    #[test]
    fn residue_small_for_real_input() {
        let mut rng = crate::rng::stream(3, &[]);
        for &(h, w) in &[(8, 8), (7, 10), (32, 32)] {
            let x = Tensor::new(
                vec![2, h, w],
                (0..2 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let f = LowPassFilter::new(h, w, 0.3).unwrap();
            let (_, res) = f.apply_with_residue(&x).unwrap();
            assert!(res < 1e-5, "residue {res}");
        }
    }
}
