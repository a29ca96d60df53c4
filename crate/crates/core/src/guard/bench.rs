//! Affine versus reference decode cost.
//!
//! Wall time is measured; memory is an analytic count of floats held in
//! intermediate buffers per decoded latent, which does not depend on the
//! machine or the allocator.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::LatentDecoder;
use crate::diffusion::{ReferenceDecoder, ReferenceDecoderConfig};
use crate::error::{Error, Result};
use crate::linalg::median;
use crate::linear::AffineDecoder;
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub latent_dims: [usize; 3],
    pub image_dims: [usize; 3],
    pub hidden_channels: usize,
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            latent_dims: [4, 8, 8],
            image_dims: [3, 128, 128],
            hidden_channels: 48,
            batch_sizes: vec![1, 10, 50],
            repetitions: 3,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub batch: usize,
    /// Median seconds per decoded latent.
    pub linear_s: f64,
    pub reference_s: f64,
    /// `reference_s / linear_s`.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub latent_dims: [usize; 3],
    pub image_dims: [usize; 3],
    pub hidden_channels: usize,
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub linear_parameters: usize,
    /// Floats in intermediate buffers per decode: output only.
    pub linear_floats: usize,
    /// Hidden map plus output.
    pub reference_floats: usize,
    /// `1 - linear_floats / reference_floats`.
    pub memory_reduction: f64,
    /// Machine-dependent; excluded from determinism checks.
    pub timing: Vec<BenchTiming>,
}

fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut t)
}

pub fn bench_decoders(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.batch_sizes.is_empty() || opts.batch_sizes.contains(&0) || opts.repetitions == 0 {
        return Err(Error::invalid("need positive batch sizes and repetitions"));
    }
    let reference = ReferenceDecoder::new(
        opts.seed,
        ReferenceDecoderConfig {
            latent_dims: opts.latent_dims,
            image_dims: opts.image_dims,
            hidden_channels: opts.hidden_channels,
            heterogeneity: 0.0,
        },
    )?;
    let (d_z, d_x) = (reference.latent_len(), reference.image_len());
    let mut rng = stream(opts.seed, &[tag("bench")]);
    let mut normal = |n: usize, s: f64| -> Vec<f32> {
        (0..n).map(|_| (s * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
    };
    let linear = AffineDecoder::new(
        &opts.latent_dims,
        &opts.image_dims,
        Tensor::new(vec![d_x, d_z], normal(d_x * d_z, 1.0 / (d_z as f64).sqrt()))?,
        Tensor::new(vec![d_x], normal(d_x, 0.1))?,
    )?;
    let max_batch = *opts.batch_sizes.iter().max().expect("nonempty");
    let latents = normal(max_batch * d_z, 1.0);

    let mut timing = Vec::with_capacity(opts.batch_sizes.len());
    for &b in &opts.batch_sizes {
        let z = &latents[..b * d_z];
        let lin = time_median(opts.repetitions, || {
            std::hint::black_box(linear.decode_flat(z, b));
        });
        let refr = time_median(opts.repetitions, || {
            std::hint::black_box(reference.decode_flat(z, b));
        });
        let (linear_s, reference_s) = (lin / b as f64, refr / b as f64);
        timing.push(BenchTiming {
            batch: b,
            linear_s,
            reference_s,
            speedup: reference_s / linear_s.max(f64::MIN_POSITIVE),
        });
    }
    let reference_floats = reference.intermediate_floats();
    Ok(BenchReport {
        latent_dims: opts.latent_dims,
        image_dims: opts.image_dims,
        hidden_channels: opts.hidden_channels,
        batch_sizes: opts.batch_sizes.clone(),
        repetitions: opts.repetitions,
        linear_parameters: linear.parameter_count(),
        linear_floats: d_x,
        reference_floats,
        memory_reduction: 1.0 - d_x as f64 / reference_floats as f64,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_structure() {
        let opts = BenchOptions {
            latent_dims: [2, 4, 4],
            image_dims: [3, 16, 16],
            hidden_channels: 6,
            batch_sizes: vec![1, 4],
            repetitions: 2,
            seed: 1,
        };
        let r = bench_decoders(&opts).unwrap();
        assert_eq!(r.linear_floats, 768);
        assert_eq!(r.reference_floats, 6 * 256 + 768);
        assert!((r.memory_reduction - (1.0 - 768.0 / 2304.0)).abs() < 1e-12);
        assert_eq!(r.timing.iter().map(|t| t.batch).collect::<Vec<_>>(), vec![1, 4]);
        assert!(r.timing.iter().all(|t| t.linear_s > 0.0 && t.reference_s > 0.0));
        assert!(bench_decoders(&BenchOptions { batch_sizes: vec![], ..opts }).is_err());
    }
}
