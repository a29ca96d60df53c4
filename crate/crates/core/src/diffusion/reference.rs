//! Fixed nonlinear latent decoder standing in for a VAE decoder.
//!
//! `D(z) = A2 * tanh(A1 * vec(z) + c1) + c2` where
//!
//! * `A1` is a dense `h x d_z` matrix projecting the latent into a wide
//!   feature map of `hidden_channels` channels at output resolution
//!   (`h = hidden_channels * H' * W'`). Each entry is a channel-mixing weight
//!   times a separable Gaussian interpolation kernel, plus a small dense
//!   global-mixing term, so every entry is nonzero but the map stays
//!   spatially coherent.
//! * `A2` is a per-pixel channel mix from the hidden map to the output
//!   channels (a 1x1 convolution), i.e. block structured.
//!
//! Parameters are drawn from a shared family base plus a seeded per-model
//! perturbation whose size is the `heterogeneity` factor, so different seeds
//! model different backbones that still render to a common image space.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::LatentDecoder;
use crate::error::{Error, Result};
use crate::linalg::{gemm_f32, gemm_f64, Op};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

const FAMILY_SEED: u64 = 0x5eed_fa11;
const HIDDEN_GAIN: f64 = 1.0;
const HIDDEN_BIAS_STD: f64 = 0.3;
const GLOBAL_MIX: f64 = 0.05;
const KERNEL_WIDTH: f64 = 0.7;
const OUTPUT_BIAS_STD: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDecoderConfig {
    pub latent_dims: [usize; 3],
    pub image_dims: [usize; 3],
    pub hidden_channels: usize,
    pub heterogeneity: f64,
}

impl Default for ReferenceDecoderConfig {
    fn default() -> Self {
        Self {
            latent_dims: [4, 8, 8],
            image_dims: [3, 32, 32],
            hidden_channels: 8,
            heterogeneity: 0.15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceDecoder {
    seed: u64,
    config: ReferenceDecoderConfig,
    latent_dims: Vec<usize>,
    image_dims: Vec<usize>,
    /// `h x d_z`, row-major.
    a1: Vec<f32>,
    c1: Vec<f32>,
    /// `C_out x hidden_channels`.
    mix2: Vec<f32>,
    c2: Vec<f32>,
}

fn gaussian_kernel(out_len: usize, in_len: usize, width: f64) -> Vec<f64> {
    let scale = in_len as f64 / out_len as f64;
    let mut k = vec![0.0; out_len * in_len];
    for o in 0..out_len {
        let pos = (o as f64 + 0.5) * scale - 0.5;
        let row = &mut k[o * in_len..(o + 1) * in_len];
        for (i, w) in row.iter_mut().enumerate() {
            let d = (pos - i as f64) / width;
            *w = (-0.5 * d * d).exp();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= s);
    }
    k
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl ReferenceDecoder {
    pub fn new(seed: u64, config: ReferenceDecoderConfig) -> Result<Self> {
        let [c, hl, wl] = config.latent_dims;
        let [co, ho, wo] = config.image_dims;
        if [c, hl, wl, co, ho, wo].contains(&0) || config.hidden_channels == 0 {
            return Err(Error::invalid("reference decoder dims must be positive"));
        }
        if !(0.0..=1.0).contains(&config.heterogeneity) {
            return Err(Error::invalid("heterogeneity must lie in [0, 1]"));
        }
        let hc = config.hidden_channels;
        let het = config.heterogeneity;
        let d_z = c * hl * wl;
        let plane_out = ho * wo;
        let h = hc * plane_out;

        let mut base = stream(FAMILY_SEED, &[tag("reference-base"), c as u64, hc as u64, co as u64]);
        let mut own = stream(seed, &[tag("reference")]);
        let mut draw = |scale: f64| scale * (normal(&mut base) + het * normal(&mut own));

        let m1: Vec<f64> = (0..hc * c)
            .map(|_| draw(HIDDEN_GAIN / (c as f64).sqrt()))
            .collect();
        let c1_ch: Vec<f64> = (0..hc).map(|_| draw(HIDDEN_BIAS_STD)).collect();
        let mix2: Vec<f32> = (0..co * hc)
            .map(|_| draw(1.0 / (hc as f64).sqrt()) as f32)
            .collect();
        let c2: Vec<f32> = (0..co).map(|_| draw(OUTPUT_BIAS_STD) as f32).collect();

        let width = KERNEL_WIDTH * (1.0 + het * (own.gen::<f64>() - 0.5));
        let ky = gaussian_kernel(ho, hl, width);
        let kx = gaussian_kernel(wo, wl, width);
        let global = GLOBAL_MIX / (d_z as f64).sqrt();

        let mut a1 = vec![0.0f32; h * d_z];
        let mut grng = stream(seed, &[tag("reference-global")]);
        for k in 0..hc {
            for yo in 0..ho {
                for xo in 0..wo {
                    let row = (k * plane_out + yo * wo + xo) * d_z;
                    let dst = &mut a1[row..row + d_z];
                    for ci in 0..c {
                        let m = m1[k * c + ci];
                        for yi in 0..hl {
                            let kyv = m * ky[yo * hl + yi];
                            let off = ci * hl * wl + yi * wl;
                            for xi in 0..wl {
                                let g: f64 = grng.sample(StandardNormal);
                                dst[off + xi] = (kyv * kx[xo * wl + xi] + global * g) as f32;
                            }
                        }
                    }
                }
            }
        }
        let c1 = (0..h).map(|i| c1_ch[i / plane_out] as f32).collect();

        Ok(Self {
            seed,
            latent_dims: config.latent_dims.to_vec(),
            image_dims: config.image_dims.to_vec(),
            config,
            a1,
            c1,
            mix2,
            c2,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &ReferenceDecoderConfig {
        &self.config
    }

    /// Width `h` of the hidden layer.
    pub fn hidden_width(&self) -> usize {
        self.c1.len()
    }

    /// Floats held in intermediate buffers by one decode: hidden plus output.
    pub fn intermediate_floats(&self) -> usize {
        self.hidden_width() + self.image_len()
    }

    pub fn a1(&self) -> &[f32] {
        &self.a1
    }

    pub fn c1(&self) -> &[f32] {
        &self.c1
    }

    pub fn c2(&self) -> &[f32] {
        &self.c2
    }

    fn plane_out(&self) -> usize {
        self.image_dims[1] * self.image_dims[2]
    }

    fn head(&self, hidden: &[f32], out: &mut [f32]) {
        let plane = self.plane_out();
        let hc = self.config.hidden_channels;
        for (co, dst) in out.chunks_exact_mut(plane).enumerate() {
            dst.fill(self.c2[co]);
            for k in 0..hc {
                let m = self.mix2[co * hc + k];
                for (d, &v) in dst.iter_mut().zip(&hidden[k * plane..(k + 1) * plane]) {
                    *d += m * v;
                }
            }
        }
    }

    /// Decodes a batch of flattened latents (`batch x d_z`, row-major) into
    /// `batch x d_x` images.
    pub fn decode_flat(&self, latents: &[f32], batch: usize) -> Vec<f32> {
        let (d_z, d_x, h) = (self.latent_len(), self.image_len(), self.hidden_width());
        assert_eq!(latents.len(), batch * d_z);
        let mut hidden = vec![0.0f32; batch * h];
        gemm_f32(batch, d_z, h, 1.0, latents, Op::N, &self.a1, Op::T, 0.0, &mut hidden);
        for row in hidden.chunks_exact_mut(h) {
            for (v, &b) in row.iter_mut().zip(&self.c1) {
                *v = (*v + b).tanh();
            }
        }
        let mut out = vec![0.0f32; batch * d_x];
        for (hid, dst) in hidden.chunks_exact(h).zip(out.chunks_exact_mut(d_x)) {
            self.head(hid, dst);
        }
        out
    }

    pub fn decode_batch(&self, latents: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut flat = Vec::with_capacity(latents.len() * self.latent_len());
        for z in latents {
            z.expect_dims(&self.latent_dims)?;
            flat.extend_from_slice(z.data());
        }
        self.decode_flat(&flat, latents.len())
            .chunks_exact(self.image_len())
            .map(|c| Tensor::new(self.image_dims.clone(), c.to_vec()))
            .collect()
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let d_z = self.latent_len();
        self.a1
            .chunks_exact(d_z)
            .zip(&self.c1)
            .map(|(row, &b)| row.iter().zip(z).map(|(&a, &x)| a as f64 * x).sum::<f64>() + b as f64)
            .collect()
    }

    fn head_f64(&self, hidden: &[f64], bias: bool) -> Vec<f64> {
        let plane = self.plane_out();
        let hc = self.config.hidden_channels;
        let co_n = self.image_dims[0];
        let mut out = vec![0.0; co_n * plane];
        for co in 0..co_n {
            let dst = &mut out[co * plane..(co + 1) * plane];
            if bias {
                dst.fill(self.c2[co] as f64);
            }
            for k in 0..hc {
                let m = self.mix2[co * hc + k] as f64;
                for (d, &v) in dst.iter_mut().zip(&hidden[k * plane..(k + 1) * plane]) {
                    *d += m * v;
                }
            }
        }
        out
    }

    /// Dense analytic Jacobian `A2 diag(1 - tanh^2) A1`, `d_x x d_z` row-major.
    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let d_z = self.latent_len();
        let plane = self.plane_out();
        let hc = self.config.hidden_channels;
        let co_n = self.image_dims[0];
        let slope: Vec<f64> = self
            .pre_activation(z)
            .into_iter()
            .map(|p| 1.0 - p.tanh().powi(2))
            .collect();
        let mut j = vec![0.0; co_n * plane * d_z];
        for co in 0..co_n {
            for p in 0..plane {
                let dst = &mut j[(co * plane + p) * d_z..(co * plane + p + 1) * d_z];
                for k in 0..hc {
                    let hid = k * plane + p;
                    let w = self.mix2[co * hc + k] as f64 * slope[hid];
                    let row = &self.a1[hid * d_z..(hid + 1) * d_z];
                    for (d, &a) in dst.iter_mut().zip(row) {
                        *d += w * a as f64;
                    }
                }
            }
        }
        j
    }
}

impl LatentDecoder for ReferenceDecoder {
    fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    fn image_dims(&self) -> &[usize] {
        &self.image_dims
    }

    fn decode_f64(&self, z: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self.pre_activation(z).into_iter().map(f64::tanh).collect();
        self.head_f64(&hidden, true)
    }

    fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let d_z = self.latent_len();
        let pre = self.pre_activation(z);
        let hidden: Vec<f64> = self
            .a1
            .chunks_exact(d_z)
            .zip(&pre)
            .map(|(row, &p)| {
                let u: f64 = row.iter().zip(v).map(|(&a, &x)| a as f64 * x).sum();
                (1.0 - p.tanh().powi(2)) * u
            })
            .collect();
        self.head_f64(&hidden, false)
    }

    fn decode_batch_f64(&self, zs: &[f64], n: usize) -> Vec<f64> {
        let (d_z, h) = (self.latent_len(), self.hidden_width());
        assert_eq!(zs.len(), n * d_z);
        let a1: Vec<f64> = self.a1.iter().map(|&a| a as f64).collect();
        let mut hidden = vec![0.0; n * h];
        gemm_f64(n, d_z, h, 1.0, zs, Op::N, &a1, Op::T, 0.0, &mut hidden);
        let mut out = Vec::with_capacity(n * self.image_len());
        for row in hidden.chunks_exact_mut(h) {
            for (v, &b) in row.iter_mut().zip(&self.c1) {
                *v = (*v + b as f64).tanh();
            }
            out.extend(self.head_f64(row, true));
        }
        out
    }
}

/// Decodes one latent with the reference decoder.
pub fn reference_decode(dec: &ReferenceDecoder, z: &Tensor) -> Result<Tensor> {
    z.expect_dims(&dec.latent_dims)?;
    Tensor::new(dec.image_dims.clone(), dec.decode_flat(z.data(), 1))
}
