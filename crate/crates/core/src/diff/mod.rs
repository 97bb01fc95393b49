//! Minimal differentiable building blocks: matrices, dense nets, optimizers,
//! learning-rate schedules and a finite-difference gradient oracle.

mod gradcheck;
mod matrix;
mod mlp;
mod optim;

pub use gradcheck::{grad_check, numeric_gradient, FD_STEP};
pub use matrix::{dot, Matrix};
pub use mlp::{gelu, normal_cdf, Activation, DenseLayer, Gradients, Mlp, MlpCache};
pub use optim::{LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState};
