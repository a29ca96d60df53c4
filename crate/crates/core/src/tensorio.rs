//! On-disk formats: FGT1 tensor files and JSON dataset manifests.
//!
//! An FGT1 file is an 8-byte fixed header, `ndim` little-endian `u32`
//! dimensions and a row-major little-endian `f32` payload:
//!
//! ```text
//! offset 0   "FGT1"
//! offset 4   dtype code (0 = f32 little-endian)
//! offset 5   ndim
//! offset 6   two zero bytes
//! offset 8   dims[0..ndim] as u32 LE
//! then       4 * prod(dims) payload bytes
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FGT1";
pub const DTYPE_F32_LE: u8 = 0;
pub const FIXED_HEADER_LEN: usize = 8;

/// Header length in bytes for a tensor with `ndim` dimensions.
pub fn header_len(ndim: usize) -> usize {
    FIXED_HEADER_LEN + 4 * ndim
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(header_len(dims.len()) + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32_LE);
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::invalid(format!("dimension {d} exceeds u32::MAX")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FIXED_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes[4] != DTYPE_F32_LE {
        return Err(Error::UnknownDtype(bytes[4]));
    }
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err(Error::invalid("tensor file declares zero dimensions"));
    }
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(Error::Truncated {
            expected: hlen,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[FIXED_HEADER_LEN..hlen]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid(format!("dims {dims:?} overflow")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(hlen))
        .ok_or_else(|| Error::invalid(format!("dims {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let data = bytes[hlen..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Generator parameters recorded by the synthetic dataset builder so that
/// consumers can rebuild the reference decoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub latent_dims: [usize; 3],
    pub image_dims: [usize; 3],
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden_channels: usize,
    pub heterogeneity: f64,
    /// Reference-decoder seed per model id, in manifest model order.
    pub decoder_seeds: Vec<(String, u64)>,
}

/// One generation trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub model_id: String,
    pub prompt: String,
    pub label: u8,
    /// Generation-step indices, strictly increasing, each in `[0, T-1]`.
    pub steps: Vec<usize>,
    pub latent_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_image_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub total_steps: usize,
    pub records: Vec<ManifestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

/// Raw shape used for parsing so that out-of-range labels surface as
/// validation errors rather than type errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    model_id: String,
    prompt: String,
    label: i64,
    steps: Vec<i64>,
    latent_paths: Vec<String>,
    #[serde(default)]
    recon_paths: Option<Vec<String>>,
    #[serde(default)]
    final_image_path: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    total_steps: usize,
    records: Vec<RawRecord>,
    #[serde(default)]
    generator: Option<GeneratorInfo>,
}

impl ManifestRecord {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        let err = |msg: String| Err(Error::Manifest(format!("record `{}`: {msg}", self.prompt)));
        if self.label > 1 {
            return err(format!("label {} not in {{0,1}}", self.label));
        }
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!("steps {:?} not strictly increasing", self.steps));
        }
        if let Some(&s) = self.steps.iter().find(|&&s| s >= total_steps) {
            return err(format!("step {s} outside [0, {}]", total_steps.saturating_sub(1)));
        }
        if self.latent_paths.len() != self.steps.len() {
            return err(format!(
                "{} latent paths for {} steps",
                self.latent_paths.len(),
                self.steps.len()
            ));
        }
        if let Some(r) = &self.recon_paths {
            if r.len() != self.steps.len() {
                return err(format!("{} recon paths for {} steps", r.len(), self.steps.len()));
            }
        }
        Ok(())
    }

    pub fn step_position(&self, step: usize) -> Option<usize> {
        self.steps.binary_search(&step).ok()
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Manifest("total_steps must be positive".into()));
        }
        self.records
            .iter()
            .try_for_each(|r| r.validate(self.total_steps))
    }

    /// Distinct model ids in first-appearance order.
    pub fn model_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.model_id) {
                out.push(r.model_id.clone());
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        let mut records = Vec::with_capacity(raw.records.len());
        for r in raw.records {
            if !(0..=1).contains(&r.label) {
                return Err(Error::Manifest(format!(
                    "record `{}`: label {} not in {{0,1}}",
                    r.prompt, r.label
                )));
            }
            let steps = r
                .steps
                .iter()
                .map(|&s| {
                    usize::try_from(s)
                        .map_err(|_| Error::Manifest(format!("record `{}`: negative step {s}", r.prompt)))
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(ManifestRecord {
                model_id: r.model_id,
                prompt: r.prompt,
                label: r.label as u8,
                steps,
                latent_paths: r.latent_paths,
                recon_paths: r.recon_paths,
                final_image_path: r.final_image_path,
            });
        }
        let m = DatasetManifest {
            total_steps: raw.total_steps,
            records,
            generator: raw.generator,
        };
        m.validate()?;
        Ok(m)
    }
}

pub fn write_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = m.to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_json(&text)
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
