//! Adversarial dependence minimization.
//!
//! An encoder is trained against a bank of small *dependency predictors*,
//! one per embedding coordinate, each imputing its coordinate from all the
//! others. Predictors minimize the reconstruction error; the encoder pushes
//! it up, which drives the coordinates towards mutual independence.
//!
//! Modules:
//! - [`diff`]: matrices, dense nets, optimizers, schedules, gradient checking
//! - [`metrics`]: Pearson, covariance, distance correlation
//! - [`game`]: standardizer, predictor bank, adversarial losses, training loop
//! - [`synth`]: seeded synthetic distributions
//! - [`apps`]: PCA/PICA, regularized classification, toy SSL, kNN evaluation

pub mod apps;
pub mod diff;
pub mod error;
pub mod game;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
