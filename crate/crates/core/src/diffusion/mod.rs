//! Forward diffusion, the reference decoder family and synthetic data.

pub mod dataset;
pub mod reference;
pub mod schedule;
pub mod synth;

pub use dataset::{build_synthetic_dataset, noise_like, reference_decoder_for, DatasetConfig, Trajectory};
pub use reference::{reference_decode, ReferenceDecoder, ReferenceDecoderConfig};
pub use schedule::{
    forward_noise, gen_step_to_diffusion_time, make_linear_beta_schedule, VarianceSchedule,
    DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_TOTAL_STEPS,
};
pub use synth::{injected_pattern, synth_instance, SynthParams};
