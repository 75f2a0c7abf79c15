//! Training loop with Adam and parameter averaging.

mod optim;
mod train;

pub use optim::{ema_update, Adam};
pub use train::{
    epsilon_mse, run_training, train_step, EvalRecord, TrainConfig, TrainReport, TrainState,
};
