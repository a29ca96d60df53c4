//! Seeded synthetic trajectory datasets.
//!
//! Layout on disk:
//!
//! ```text
//! out_dir/manifest.json
//! out_dir/<model>/<record>/z_<step>.fgt      noised latent at generation step
//! out_dir/<model>/<record>/recon_<step>.fgt  reference decode of that latent
//! out_dir/<model>/<record>/final.fgt         reference decode of the clean latent
//! ```
//!
//! Every random draw is keyed by `(seed, record index, step)`, so the output
//! is a pure function of the configuration.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::reference::{ReferenceDecoder, ReferenceDecoderConfig};
use super::schedule::{
    forward_noise, gen_step_to_diffusion_time, make_linear_beta_schedule, VarianceSchedule,
    DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_TOTAL_STEPS,
};
use super::synth::{synth_instance, SynthParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::tensor::Tensor;
use crate::tensorio::{
    resolve, write_manifest, write_tensor, DatasetManifest, GeneratorInfo, ManifestRecord,
};

/// One generation instance held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub index: usize,
    pub model_index: usize,
    pub model_id: String,
    pub prompt: String,
    pub label: u8,
    pub seed: u64,
    pub z0: Tensor,
    /// `(generation step, noised latent)` in increasing step order.
    pub latents: Vec<(usize, Tensor)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_per_model: usize,
    pub models: Vec<String>,
    pub total_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Generation steps stored per trajectory.
    pub steps: Vec<usize>,
    pub seed: u64,
    /// Selects an independent set of instances under the same decoders, so a
    /// held-out split only differs in this field.
    #[serde(default)]
    pub split: u64,
    pub decoder: ReferenceDecoderConfig,
    pub synth: SynthParams,
    pub balanced: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_per_model: 8,
            models: vec!["m0".into()],
            total_steps: DEFAULT_TOTAL_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            steps: vec![20, 49],
            seed: crate::rng::DEFAULT_SEED,
            split: 0,
            decoder: ReferenceDecoderConfig::default(),
            synth: SynthParams::default(),
            balanced: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_model == 0 {
            return Err(Error::invalid("need at least one trajectory per model"));
        }
        if self.models.is_empty() {
            return Err(Error::invalid("need at least one model id"));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.is_empty() || m.contains(['/', '\\']) || m == "." || m == ".." {
                return Err(Error::invalid(format!("model id `{m}` is not a plain name")));
            }
            if self.models[..i].contains(m) {
                return Err(Error::invalid(format!("duplicate model id `{m}`")));
            }
        }
        if self.steps.is_empty() || self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("steps must be nonempty and strictly increasing"));
        }
        if let Some(&s) = self.steps.iter().find(|&&s| s >= self.total_steps) {
            return Err(Error::invalid(format!("step {s} outside [0, {}]", self.total_steps - 1)));
        }
        self.synth.validate()
    }

    pub fn schedule(&self) -> Result<VarianceSchedule> {
        make_linear_beta_schedule(self.total_steps, self.beta_min, self.beta_max)
    }

    pub fn record_count(&self) -> usize {
        self.n_per_model * self.models.len()
    }

    pub fn decoder_seed(&self, model_index: usize) -> u64 {
        derive_seed(self.seed, &[tag("decoder"), model_index as u64])
    }

    pub fn reference_decoder(&self, model_index: usize) -> Result<ReferenceDecoder> {
        ReferenceDecoder::new(self.decoder_seed(model_index), self.decoder.clone())
    }

    pub fn reference_decoders(&self) -> Result<Vec<ReferenceDecoder>> {
        (0..self.models.len()).map(|m| self.reference_decoder(m)).collect()
    }

    pub fn generator_info(&self) -> GeneratorInfo {
        GeneratorInfo {
            seed: self.seed,
            latent_dims: self.decoder.latent_dims,
            image_dims: self.decoder.image_dims,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            hidden_channels: self.decoder.hidden_channels,
            heterogeneity: self.decoder.heterogeneity,
            decoder_seeds: self
                .models
                .iter()
                .enumerate()
                .map(|(i, m)| (m.clone(), self.decoder_seed(i)))
                .collect(),
        }
    }

    fn label_of(&self, index: usize) -> u8 {
        if self.balanced {
            (index % 2) as u8
        } else {
            stream(self.seed, &[tag("label"), self.split, index as u64]).gen_range(0..2)
        }
    }

    /// Builds trajectory `index` (model-major order) at the configured steps.
    pub fn trajectory(&self, sched: &VarianceSchedule, index: usize) -> Result<Trajectory> {
        if index >= self.record_count() {
            return Err(Error::invalid(format!("record {index} out of range")));
        }
        let model_index = index / self.n_per_model;
        let label = self.label_of(index);
        let seed = derive_seed(self.seed, &[tag("instance"), self.split, index as u64]);
        let (z0, _) = synth_instance(seed, label, self.decoder.latent_dims, &self.synth)?;
        let latents = self
            .steps
            .iter()
            .map(|&s| {
                let eps = noise_like(&z0, stream(self.seed, &[tag("noise"), self.split, index as u64, s as u64]))?;
                let t = gen_step_to_diffusion_time(s, self.total_steps)?;
                Ok((s, forward_noise(&z0, sched, t, &eps)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            index,
            model_index,
            model_id: self.models[model_index].clone(),
            prompt: format!("synthetic prompt {index:05}"),
            label,
            seed,
            z0,
            latents,
        })
    }

    /// Latent/image pairs for fitting the affine decoder of one model.
    ///
    /// Latents are fresh instances (balanced labels) noised to a uniformly
    /// drawn diffusion time in `0..=T`, where 0 keeps the clean latent.
    pub fn fit_pairs(&self, model_index: usize, count: usize, seed: u64) -> Result<Vec<(Tensor, Tensor)>> {
        let sched = self.schedule()?;
        let dec = self.reference_decoder(model_index)?;
        let mut latents = Vec::with_capacity(count);
        for i in 0..count {
            let mut rng = stream(seed, &[tag("pairs"), model_index as u64, i as u64]);
            let inst = rng.gen::<u64>();
            let (z0, _) = synth_instance(inst, (i % 2) as u8, self.decoder.latent_dims, &self.synth)?;
            let t = rng.gen_range(0..=self.total_steps);
            let z = if t == 0 {
                z0
            } else {
                forward_noise(&z0, &sched, t, &noise_like(&z0, rng)?)?
            };
            latents.push(z);
        }
        let images = dec.decode_batch(&latents)?;
        Ok(latents.into_iter().zip(images).collect())
    }
}

/// Standard-normal tensor shaped like `like`.
pub fn noise_like<R: Rng>(like: &Tensor, mut rng: R) -> Result<Tensor> {
    let data = (0..like.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    Tensor::new(like.dims().to_vec(), data)
}

/// Writes the dataset under `out_dir` and returns its manifest.
pub fn build_synthetic_dataset(cfg: &DatasetConfig, out_dir: &Path, write_recon: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sched = cfg.schedule()?;
    let decoders = cfg.reference_decoders()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(cfg.record_count());
    for index in 0..cfg.record_count() {
        let traj = cfg.trajectory(&sched, index)?;
        let dec = &decoders[traj.model_index];
        let rel_dir = format!("{}/{:05}", traj.model_id, index % cfg.n_per_model);
        let dir = out_dir.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mut latent_paths = Vec::new();
        let mut recon_paths = Vec::new();
        let zs: Vec<Tensor> = traj.latents.iter().map(|(_, z)| z.clone()).collect();
        let recons = if write_recon {
            dec.decode_batch(&zs)?
        } else {
            Vec::new()
        };
        for (k, (step, z)) in traj.latents.iter().enumerate() {
            let rel = format!("{rel_dir}/z_{step}.fgt");
            write_tensor(z, resolve(out_dir, &rel))?;
            latent_paths.push(rel);
            if write_recon {
                let rel = format!("{rel_dir}/recon_{step}.fgt");
                write_tensor(&recons[k], resolve(out_dir, &rel))?;
                recon_paths.push(rel);
            }
        }
        let final_rel = format!("{rel_dir}/final.fgt");
        let final_img = dec.decode_batch(std::slice::from_ref(&traj.z0))?.remove(0);
        write_tensor(&final_img, resolve(out_dir, &final_rel))?;

        records.push(ManifestRecord {
            model_id: traj.model_id,
            prompt: traj.prompt,
            label: traj.label,
            steps: cfg.steps.clone(),
            latent_paths,
            recon_paths: write_recon.then_some(recon_paths),
            final_image_path: Some(final_rel),
        });
    }
    let manifest = DatasetManifest {
        total_steps: cfg.total_steps,
        records,
        generator: Some(cfg.generator_info()),
    };
    write_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Rebuilds the dataset configuration implied by a manifest's generator block,
/// enough to reconstruct its reference decoders.
pub fn reference_decoder_for(info: &GeneratorInfo, model_id: &str) -> Result<ReferenceDecoder> {
    let seed = info
        .decoder_seeds
        .iter()
        .find(|(m, _)| m == model_id)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::MissingDecoder(model_id.to_string()))?;
    ReferenceDecoder::new(
        seed,
        ReferenceDecoderConfig {
            latent_dims: info.latent_dims,
            image_dims: info.image_dims,
            hidden_channels: info.hidden_channels,
            heterogeneity: info.heterogeneity,
        },
    )
}
