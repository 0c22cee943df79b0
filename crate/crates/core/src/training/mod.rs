//! Losses, mask sampling, Adam with cosine schedule, exact gradients and the
//! two-phase training loop.

mod adam;
mod config;
mod gradients;
mod loss;
mod masking;
mod trainer;

pub use adam::{adam_step, learning_rate, OptimizerState};
pub use config::{LrSchedule, Phase2, TrainConfig};
pub use gradients::{
    backward, gradient_check, gradient_check_random, loss_value, relative_error, tensor_relative_error, GradCheckReport, Gradients, TensorCheck,
};
pub use loss::{mfm_loss, smooth_l1, LossConfig, LossVariant};
pub use masking::make_mask_plan;
pub use trainer::{
    continue_training, extract_clips, loss_curve_csv, run_training, train_step, LossRecord,
    TrainState, TrainingCorpus,
};
