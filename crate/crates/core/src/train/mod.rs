//! Losses, optimization, the training loop, evaluation and ablations.

mod ablation;
mod config;
mod eval;
mod loss;
mod optim;
mod trainer;

pub use ablation::{run_ablation, AblationAxis, AblationRow, AblationSettings, AblationTable};
pub use config::RunConfig;
pub use eval::{evaluate, smooth_l1_value, swapped_label, EvalReport, EvalTable, KindMetrics, PromptPolicy};
pub use loss::{
    perceptual_loss, smooth_l1, total_loss, ConvPyramid, FeatureExtractor, LossConfig, PerceptualMode,
    DEFAULT_FEATURE_SEED, DEFAULT_LAMBDA,
};
pub use optim::{Adam, LrSchedule};
pub use trainer::{
    held_out_metrics, train, DataSpec, EpochRecord, TrainConfig, TrainReport, Trainer, CHECKPOINT_FILE, CSV_HEADER,
    METRICS_FILE,
};
