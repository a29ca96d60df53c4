//! Decode, low-pass and pool latents into classifier features.

use std::collections::BTreeMap;
use std::path::Path;

use crate::decoder::LatentDecoder;
use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::freq::LowPassFilter;
use crate::linear::AffineDecoder;
use crate::tensor::Tensor;
use crate::tensorio::{read_tensor, resolve, DatasetManifest};

use super::classifier::{Pool, POOL_SIZE};
use super::loss::StageBatch;

/// Affine decode, optional low-pass, average pool.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    image_dims: [usize; 3],
    lpf: Option<LowPassFilter>,
    pool: Pool,
}

impl FeatureExtractor {
    /// `lpf_r = None` skips filtering.
    pub fn new(image_dims: [usize; 3], lpf_r: Option<f64>) -> Result<Self> {
        let lpf = lpf_r
            .map(|r| LowPassFilter::new(image_dims[1], image_dims[2], r))
            .transpose()?;
        Ok(Self {
            image_dims,
            lpf,
            pool: Pool::new(image_dims, POOL_SIZE)?,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.pool.output_len()
    }

    pub fn lpf(&self) -> Option<&LowPassFilter> {
        self.lpf.as_ref()
    }

    /// Filtered images for `batch` flattened latents (`batch x d_x`).
    pub fn images(&self, dec: &AffineDecoder, latents: &[f32], batch: usize) -> Result<Vec<f32>> {
        if dec.image_dims() != self.image_dims {
            return Err(Error::DimMismatch {
                expected: self.image_dims.to_vec(),
                got: dec.image_dims().to_vec(),
            });
        }
        if latents.len() != batch * dec.latent_len() {
            return Err(Error::invalid("latent buffer does not match decoder dims"));
        }
        let mut x = dec.decode_flat(latents, batch);
        if let Some(f) = &self.lpf {
            f.apply_slice(&mut x);
        }
        Ok(x)
    }

    /// Features appended to `out`, one row per latent.
    pub fn extract_into(&self, dec: &AffineDecoder, latents: &[f32], batch: usize, out: &mut Vec<f32>) -> Result<()> {
        let x = self.images(dec, latents, batch)?;
        let mut row = vec![0.0; self.feature_len()];
        for img in x.chunks_exact(self.pool.input_len()) {
            self.pool.apply(img, &mut row);
            out.extend(row.iter().map(|&v| v as f32));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFeatures {
    pub model_id: String,
    pub label: u8,
    /// `steps.len() x feature_len`, in the set's step order.
    pub features: Vec<f32>,
}

/// Per-instance, per-step features for a fixed list of generation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub steps: Vec<usize>,
    pub feature_len: usize,
    pub instances: Vec<InstanceFeatures>,
}

fn decoder_for<'a>(decoders: &'a BTreeMap<String, AffineDecoder>, model: &str) -> Result<&'a AffineDecoder> {
    decoders
        .get(model)
        .ok_or_else(|| Error::MissingDecoder(model.to_string()))
}

impl FeatureSet {
    pub fn from_trajectories(
        trajs: &[Trajectory],
        decoders: &BTreeMap<String, AffineDecoder>,
        extractor: &FeatureExtractor,
        steps: &[usize],
    ) -> Result<Self> {
        let mut instances = Vec::with_capacity(trajs.len());
        for t in trajs {
            let dec = decoder_for(decoders, &t.model_id)?;
            let mut flat = Vec::with_capacity(steps.len() * dec.latent_len());
            for &s in steps {
                let (_, z) = t
                    .latents
                    .iter()
                    .find(|(step, _)| *step == s)
                    .ok_or_else(|| Error::MissingSteps(format!("trajectory {} lacks step {s}", t.index)))?;
                z.expect_dims(dec.latent_dims())?;
                flat.extend_from_slice(z.data());
            }
            let mut features = Vec::with_capacity(steps.len() * extractor.feature_len());
            extractor.extract_into(dec, &flat, steps.len(), &mut features)?;
            instances.push(InstanceFeatures {
                model_id: t.model_id.clone(),
                label: t.label,
                features,
            });
        }
        Ok(Self {
            steps: steps.to_vec(),
            feature_len: extractor.feature_len(),
            instances,
        })
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        root: &Path,
        decoders: &BTreeMap<String, AffineDecoder>,
        extractor: &FeatureExtractor,
        steps: &[usize],
    ) -> Result<Self> {
        manifest.validate()?;
        let mut missing = Vec::new();
        for (i, r) in manifest.records.iter().enumerate() {
            decoder_for(decoders, &r.model_id)?;
            let lacking: Vec<usize> = steps.iter().copied().filter(|&s| r.step_position(s).is_none()).collect();
            if !lacking.is_empty() {
                missing.push(format!("record {i} lacks {lacking:?}"));
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingSteps(missing.join("; ")));
        }
        let mut instances = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let dec = decoder_for(decoders, &r.model_id)?;
            let mut flat = Vec::with_capacity(steps.len() * dec.latent_len());
            for &s in steps {
                let pos = r.step_position(s).expect("checked above");
                let z: Tensor = read_tensor(resolve(root, &r.latent_paths[pos]))?;
                z.expect_dims(dec.latent_dims())?;
                flat.extend_from_slice(z.data());
            }
            let mut features = Vec::with_capacity(steps.len() * extractor.feature_len());
            extractor.extract_into(dec, &flat, steps.len(), &mut features)?;
            instances.push(InstanceFeatures {
                model_id: r.model_id.clone(),
                label: r.label,
                features,
            });
        }
        Ok(Self {
            steps: steps.to_vec(),
            feature_len: extractor.feature_len(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn step_position(&self, step: usize) -> Option<usize> {
        self.steps.iter().position(|&s| s == step)
    }

    pub fn positions(&self, steps: &[usize]) -> Result<Vec<usize>> {
        steps
            .iter()
            .map(|&s| {
                self.step_position(s)
                    .ok_or_else(|| Error::MissingSteps(format!("feature set has no step {s}")))
            })
            .collect()
    }

    pub fn row(&self, instance: usize, position: usize) -> &[f32] {
        let f = self.feature_len;
        &self.instances[instance].features[position * f..(position + 1) * f]
    }

    /// Batch of the given instances at the given step positions.
    pub fn batch(&self, instances: &[usize], positions: &[usize]) -> StageBatch {
        let mut features = Vec::with_capacity(instances.len() * positions.len() * self.feature_len);
        for &i in instances {
            for &p in positions {
                features.extend(self.row(i, p).iter().map(|&v| v as f64));
            }
        }
        StageBatch {
            steps_per_instance: positions.len(),
            features,
            labels: instances.iter().map(|&i| self.instances[i].label).collect(),
        }
    }
}
