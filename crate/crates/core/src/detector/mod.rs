//! Lightweight classifier, its losses, and the curriculum trainer.

pub mod classifier;
pub mod curriculum;
pub mod features;
pub mod loss;

pub use classifier::{sigmoid, Classifier, Pool, ARCHITECTURE, HIDDEN_WIDTH, POOL_SIZE};
pub use curriculum::{
    make_default_plan, step_accuracy, train_curriculum, CurriculumPlan, LrSchedule, OptimizerKind,
    StepAccuracy, TrainReport, DEFAULT_STAGES,
};
pub use features::{FeatureExtractor, FeatureSet, InstanceFeatures};
pub use loss::{bce_loss, consistency_loss, stage_loss, stage_loss_and_grad, StageBatch, PROB_CLAMP};
