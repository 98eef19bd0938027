//! Orchestration of the two diffusion training stages, synthetic dataset
//! generation, detector training and the one-step ablation.
//!
//! Every stream of randomness is derived from the configured seed with
//! [`crate::seed::derive`], and every loop is single-threaded, so a run is
//! reproducible bit for bit from its configuration.

mod ablation;
mod detect;
mod generate;
mod model;
mod runlog;
mod train;

pub use ablation::{ablation_grid, panel, run_ablation, AblationConfig, AblationReport, ModelScore};
pub use detect::{finetune_detector, load_pairs, pretrain_detector};
pub use generate::{
    generate_synthetic_dataset, replay_record, sample_image, verify_replay, GenerationInfo, SamplerConfig, GENERATION_FILE,
};
pub use model::{DiffusionModel, DiffusionSetup, ScheduleConfig};
pub use runlog::{RunLog, RUN_LOG_FILE};
pub use train::{
    draw_styles, train_one_step, train_stage1, train_stage2, StepInfo, TrainConfig, TrainData,
};
