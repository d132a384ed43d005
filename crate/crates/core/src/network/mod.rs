//! 3D convolutional regressor from images to shape scores, with a mean head
//! and a log-variance head, trained from scratch with explicit backprop.

mod config;
mod loss;
mod model;
mod real;
mod train;

pub use config::{LossKind, LossSchedule, NetConfig, TrainConfig};
pub use loss::{bayesian_loss, l2_loss, loss, LossGrad};
pub use model::{DropoutMode, ForwardCache, NetParams, Prediction, INITIAL_SLOPE, NET_MAGIC};
pub use real::Real;
pub(crate) use real::matmul_bt;
pub use train::{evaluate_loss, train, train_with, write_history, Dataset, EpochRecord, TrainOutcome};
