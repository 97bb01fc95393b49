//! The encoder alone against the predictors on correlated Gaussian data:
//! the predictor error should settle at the unit variance.

use serde::{Deserialize, Serialize};

use crate::diff::{Activation, LrSchedule, Mlp, OptimizerConfig};
use crate::error::Result;
use crate::game::{admin_train, AdminConfig, Batch, NoTask, PredictorBank, PredictorSpec, RunLog};
use crate::synth::{streams, CorrelatedGaussian, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeConfig {
    pub input_dim: usize,
    pub d: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub k: usize,
    pub encoder_lr: f64,
    pub predictor_lr: f64,
    pub monitor_size: usize,
    pub dcorr_every: usize,
    /// Steps averaged for the reported final predictor loss.
    pub tail: usize,
    pub seed: u64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            d: 4,
            hidden: 32,
            steps: 5000,
            batch_size: 256,
            k: 1,
            encoder_lr: 1e-3,
            predictor_lr: 1e-2,
            monitor_size: 2048,
            dcorr_every: 500,
            tail: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    /// Mean predictor loss over the last `tail` steps.
    pub final_predictor_loss: f64,
    /// Mean |Pearson| on the monitor batch after training.
    pub final_mean_abs_pearson: f64,
    pub initial_mean_sq_dcorr: f64,
    pub final_mean_sq_dcorr: f64,
    pub final_mean_norm: f64,
}

pub fn game_config(cfg: &ConvergeConfig) -> Result<AdminConfig> {
    Ok(AdminConfig {
        lambda: 1.0,
        k: cfg.k,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        predictor: PredictorSpec::two_layer(),
        encoder_opt: OptimizerConfig::adam(cfg.encoder_lr).with_schedule(LrSchedule::cosine(
            cfg.encoder_lr,
            cfg.steps,
            0,
        )?),
        predictor_opt: OptimizerConfig::adam(cfg.predictor_lr),
        dcorr_every: cfg.dcorr_every,
        monitor_size: cfg.monitor_size,
        ..AdminConfig::default()
    })
}

/// Trains a two-layer encoder under the standardized game with no task term.
pub fn run_converge(cfg: &ConvergeConfig) -> Result<(ConvergeReport, RunLog)> {
    let game = game_config(cfg)?;
    let source_dist = CorrelatedGaussian::new(cfg.input_dim, cfg.seed);
    let source = |n: usize, rng: &mut Rng| Ok(Batch::single(source_dist.sample(n, rng)));
    let mut encoder = Mlp::init(
        &[cfg.input_dim, cfg.hidden, cfg.d],
        Activation::Gelu,
        Activation::Identity,
        &mut Rng::new(cfg.seed, streams::ENCODER_INIT),
    )?;
    let mut bank = PredictorBank::new(
        cfg.d,
        game.predictor.clone(),
        &mut Rng::new(cfg.seed, streams::BANK_INIT),
    )?;
    let log = admin_train(&mut encoder, &mut bank, &source, &mut NoTask, &game)?;
    let nan = f64::NAN;
    let summary = log.summary.as_ref();
    let report = ConvergeReport {
        final_predictor_loss: log.tail_mean(cfg.tail, |r| r.predictor_loss).unwrap_or(nan),
        final_mean_abs_pearson: summary.map_or(nan, |s| s.mean_abs_offdiag_pearson),
        initial_mean_sq_dcorr: log.first_probe().map_or(nan, |p| p.mean_sq_dcorr),
        final_mean_sq_dcorr: summary.map_or(nan, |s| s.mean_sq_dcorr),
        final_mean_norm: log.last().map_or(nan, |r| r.mean_norm),
    };
    Ok((report, log))
}
