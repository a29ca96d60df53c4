//! Early-exit guard over a stream of per-step latents.
//!
//! A step is scored as `predict(lpf(decode(z)))`. The guard visits steps in
//! generation order, scores the selected ones, and stops at the first score
//! at or above the threshold. Only when nothing triggers is the expensive
//! reference decoder run, once, on the last latent.

pub mod bench;
pub mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::Classifier;
use crate::diffusion::{ReferenceDecoder, Trajectory};
use crate::error::{Error, Result};
use crate::freq::LowPassFilter;
use crate::linear::AffineDecoder;
use crate::tensor::Tensor;
use crate::tensorio::{read_tensor, resolve, DatasetManifest};

pub use bench::{bench_decoders, BenchOptions, BenchReport, BenchTiming};
pub use metrics::MetricsReport;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct GuardConfig {
    steps: Vec<usize>,
    threshold: f64,
    decoder: AffineDecoder,
    lpf: LowPassFilter,
    classifier: Classifier,
}

impl GuardConfig {
    pub fn new(
        steps: &[usize],
        threshold: f64,
        decoder: AffineDecoder,
        lpf_r: f64,
        classifier: Classifier,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("guard needs at least one selected step"));
        }
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::invalid(format!("threshold {threshold} must be finite and >= 0")));
        }
        let image = decoder.image_dims_array()?;
        if classifier.input_dims() != image {
            return Err(Error::DimMismatch {
                expected: image.to_vec(),
                got: classifier.input_dims().to_vec(),
            });
        }
        let mut steps = steps.to_vec();
        steps.sort_unstable();
        steps.dedup();
        Ok(Self {
            steps,
            threshold,
            lpf: LowPassFilter::new(image[1], image[2], lpf_r)?,
            decoder,
            classifier,
        })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn decoder(&self) -> &AffineDecoder {
        &self.decoder
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn lpf_ratio(&self) -> f64 {
        self.lpf.cutoff_ratio().expect("built from a ratio")
    }

    /// Same guard with a different decoder (one per model id).
    pub fn with_decoder(&self, decoder: AffineDecoder) -> Result<Self> {
        Self::new(&self.steps, self.threshold, decoder, self.lpf_ratio(), self.classifier.clone())
    }
}

/// Score of one latent.
pub fn guard_step(cfg: &GuardConfig, z: &Tensor) -> Result<f64> {
    let x = cfg.decoder.decode(z)?;
    let x = cfg.lpf.apply(&x)?;
    cfg.classifier.predict(&x)
}

pub fn aggregate_max(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty score list"));
    }
    Ok(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn threshold_decision(p: f64, delta: f64) -> u8 {
    u8::from(p >= delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardDecision {
    pub label: u8,
    pub trigger_step: Option<usize>,
    /// Scores of the selected steps visited before the decision.
    pub scores: Vec<StepScore>,
    #[serde(skip)]
    pub final_image: Option<Tensor>,
    pub reference_decodes: usize,
}

/// Incremental form of [`run_guard`] for callers that receive latents one
/// at a time.
#[derive(Debug)]
pub struct GuardSession<'a> {
    cfg: &'a GuardConfig,
    last_step: Option<usize>,
    last_latent: Option<Tensor>,
    seen: Vec<usize>,
    scores: Vec<StepScore>,
    trigger: Option<usize>,
}

impl<'a> GuardSession<'a> {
    pub fn new(cfg: &'a GuardConfig) -> Self {
        Self {
            cfg,
            last_step: None,
            last_latent: None,
            seen: Vec::new(),
            scores: Vec::new(),
            trigger: None,
        }
    }

    pub fn triggered(&self) -> Option<usize> {
        self.trigger
    }

    pub fn scores(&self) -> &[StepScore] {
        &self.scores
    }

    /// Feeds the latent after generation step `step`. Returns `true` once the
    /// guard has triggered; later pushes are rejected.
    pub fn push(&mut self, step: usize, z: &Tensor) -> Result<bool> {
        if self.trigger.is_some() {
            return Err(Error::invalid("guard already triggered"));
        }
        if self.last_step.is_some_and(|s| step <= s) {
            return Err(Error::invalid(format!(
                "step {step} arrived after step {}; steps must increase",
                self.last_step.unwrap_or_default()
            )));
        }
        z.expect_dims(crate::decoder::LatentDecoder::latent_dims(&self.cfg.decoder))?;
        self.last_step = Some(step);
        if self.cfg.steps.binary_search(&step).is_ok() {
            self.seen.push(step);
            let score = guard_step(self.cfg, z)?;
            self.scores.push(StepScore { step, score });
            if threshold_decision(score, self.cfg.threshold) == 1 {
                self.trigger = Some(step);
                self.last_latent = None;
                return Ok(true);
            }
        }
        self.last_latent = Some(z.clone());
        Ok(false)
    }

    /// Closes the stream. Without a trigger every selected step must have
    /// arrived; the final decoder, if given, then renders the last latent.
    pub fn finish(self, final_decoder: Option<&ReferenceDecoder>) -> Result<GuardDecision> {
        if let Some(step) = self.trigger {
            return Ok(GuardDecision {
                label: 1,
                trigger_step: Some(step),
                scores: self.scores,
                final_image: None,
                reference_decodes: 0,
            });
        }
        let missing: Vec<usize> = self
            .cfg
            .steps
            .iter()
            .copied()
            .filter(|s| !self.seen.contains(s))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InsufficientTrajectory { missing });
        }
        let (final_image, reference_decodes) = match (final_decoder, self.last_latent) {
            (Some(dec), Some(z)) => (Some(dec.decode_batch(std::slice::from_ref(&z))?.remove(0)), 1),
            _ => (None, 0),
        };
        Ok(GuardDecision {
            label: 0,
            trigger_step: None,
            scores: self.scores,
            final_image,
            reference_decodes,
        })
    }
}

/// Runs the guard over `stream`, consuming items only until a decision.
pub fn run_guard<I>(cfg: &GuardConfig, stream: I, final_decoder: Option<&ReferenceDecoder>) -> Result<GuardDecision>
where
    I: IntoIterator<Item = Result<(usize, Tensor)>>,
{
    let mut session = GuardSession::new(cfg);
    for item in stream {
        let (step, z) = item?;
        if session.push(step, &z)? {
            break;
        }
    }
    session.finish(final_decoder)
}

fn config_for<'a>(configs: &'a BTreeMap<String, GuardConfig>, model: &str) -> Result<&'a GuardConfig> {
    configs
        .get(model)
        .ok_or_else(|| Error::MissingDecoder(model.to_string()))
}

/// Guard decisions for every manifest record (no final decode), compared
/// with the labels. `configs` maps model id to that model's guard.
pub fn evaluate(configs: &BTreeMap<String, GuardConfig>, manifest: &DatasetManifest, root: &Path) -> Result<MetricsReport> {
    manifest.validate()?;
    let mut missing = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let cfg = config_for(configs, &r.model_id)?;
        let lacking: Vec<usize> = cfg.steps.iter().copied().filter(|&s| r.step_position(s).is_none()).collect();
        if !lacking.is_empty() {
            missing.push(format!("record {i} ({}) lacks {lacking:?}", r.model_id));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingSteps(missing.join("; ")));
    }
    let mut pred = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let cfg = config_for(configs, &r.model_id)?;
        let stream = r
            .steps
            .iter()
            .zip(&r.latent_paths)
            .map(|(&s, p)| read_tensor(resolve(root, p)).map(|z| (s, z)));
        pred.push(run_guard(cfg, stream, None)?.label);
    }
    let labels: Vec<u8> = manifest.records.iter().map(|r| r.label).collect();
    Ok(MetricsReport::from_predictions(&pred, &labels))
}

/// In-memory counterpart of [`evaluate`].
pub fn evaluate_trajectories(configs: &BTreeMap<String, GuardConfig>, trajs: &[Trajectory]) -> Result<MetricsReport> {
    let mut pred = Vec::with_capacity(trajs.len());
    for t in trajs {
        let cfg = config_for(configs, &t.model_id)?;
        let stream = t.latents.iter().map(|(s, z)| Ok((*s, z.clone())));
        pred.push(run_guard(cfg, stream, None)?.label);
    }
    let labels: Vec<u8> = trajs.iter().map(|t| t.label).collect();
    Ok(MetricsReport::from_predictions(&pred, &labels))
}
