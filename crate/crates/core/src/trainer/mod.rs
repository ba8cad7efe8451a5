//! Fine-tuning: freeze strategies, momentum SGD with cosine decay, and the
//! training loop.

mod fit;
mod freeze;
mod optim;

pub use fit::{
    epoch_log_csv, evaluate_ea, evaluate_loss, fit, predict_samples, EpochLog, FitOutcome, Sample,
    TrainConfig, EPOCH_LOG_HEADER,
};
pub use freeze::{freeze_mask, FreezeMask, Strategy};
pub use optim::{cosine_lr, SgdMomentum};
