//! The dependence-minimization game: batch standardization, the predictor
//! bank, the adversarial objectives and the alternating training loop.

mod bank;
mod config;
mod loss;
mod runlog;
mod standardize;
mod train;

pub use bank::{BankCache, PredictorBank, PredictorSpec};
pub use config::{AdminConfig, Formulation};
pub use loss::{
    margin_adversarial, mean_distance, predictor_loss, predictor_loss_grad,
    standardized_adversarial, unbounded_adversarial, Distance, LossGrad,
};
pub use runlog::{
    Divergence, ProbeRecord, RunLog, StepRecord, RUNLOG_CSV_HEADER, RUNLOG_SCHEMA_VERSION,
};
pub use standardize::{standardize, Standardizer, DEFAULT_EPS};
pub use train::{
    admin_train, adversarial_objective, adversarial_value, encoder_objective, encoder_step,
    predictor_objective, predictor_step, predictor_view, task_only_train, Batch, DataSource,
    Encoder, EncoderEval, NoTask, TaskEval, TaskHook,
};
