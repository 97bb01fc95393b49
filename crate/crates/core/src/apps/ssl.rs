//! Label-free training on the colored-shapes data: two noisy views of each
//! latent row, an invariance loss between their standardized representations
//! and the dependence game on both views.

use serde::{Deserialize, Serialize};

use super::classify::attribute_knn;
use crate::diff::{Activation, LrSchedule, Matrix, Mlp, OptimizerConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::game::{
    admin_train, AdminConfig, Batch, Distance, Encoder, Formulation, PredictorBank, PredictorSpec,
    RunLog, Standardizer, TaskEval, TaskHook,
};
use crate::metrics::mean_sq_dcorr;
use crate::synth::{all_combos, streams, Rng, ShapesConfig, ShapesEmbedding};

/// Mean squared difference of the batch-standardized views and its gradient
/// w.r.t. each raw view.
pub fn invariance_mse(z1: &Matrix, z2: &Matrix, eps: f64) -> Result<(f64, Matrix, Matrix)> {
    z1.check_same(z2, "invariance views")?;
    let mut s1 = Standardizer::new(eps);
    let mut s2 = Standardizer::new(eps);
    let y1 = s1.forward(z1)?;
    let y2 = s2.forward(z2)?;
    let diff = y1.sub(&y2)?;
    let count = diff.data().len() as f64;
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / count;
    let g = diff.scale(2.0 / count);
    Ok((loss, s1.backward(&g)?, s2.backward(&g.scale(-1.0))?))
}

/// Task hook pulling the two views together.
#[derive(Clone, Copy, Debug)]
pub struct InvarianceHook {
    pub eps: f64,
}

impl<E: Encoder> TaskHook<E> for InvarianceHook {
    fn evaluate(&self, _encoder: &E, _batch: &Batch, z: &[Matrix]) -> Result<TaskEval> {
        if z.len() != 2 {
            return Err(Error::dim(format!(
                "invariance needs two views, got {}",
                z.len()
            )));
        }
        let (loss, g1, g2) = invariance_mse(&z[0], &z[1], self.eps)?;
        Ok(TaskEval {
            loss,
            grad_z: vec![g1, g2],
            ..TaskEval::default()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    /// `noise_sigma` here is the augmentation strength.
    pub shapes: ShapesConfig,
    /// Latent rows per `(shape, color)` pair in the unlabeled pool.
    pub pool_per_combo: usize,
    pub hidden: usize,
    pub d: usize,
    pub steps: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub encoder_kind: OptimizerKind,
    pub weight_decay: f64,
    pub predictor_opt: OptimizerConfig,
    pub k: usize,
    pub formulation: Formulation,
    pub distance: Distance,
    pub margin: f64,
    pub lambda: f64,
    pub knn_k: usize,
    pub eval_per_combo: usize,
    pub monitor_size: usize,
    pub dcorr_every: usize,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            shapes: ShapesConfig {
                noise_sigma: 0.1,
                ..ShapesConfig::default()
            },
            pool_per_combo: 1000,
            hidden: 64,
            d: 8,
            steps: 2000,
            warmup: 100,
            batch_size: 256,
            lr: 1e-3,
            encoder_kind: OptimizerKind::adam(),
            weight_decay: 0.0,
            predictor_opt: OptimizerConfig::adam(1e-2),
            k: 1,
            formulation: Formulation::Standardized,
            distance: Distance::L2Squared,
            margin: 0.4,
            lambda: 1.0,
            knn_k: super::knn::DEFAULT_K,
            eval_per_combo: 500,
            monitor_size: 512,
            dcorr_every: 0,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn game_config(&self) -> Result<AdminConfig> {
        Ok(AdminConfig {
            formulation: self.formulation,
            distance: self.distance,
            margin: self.margin,
            lambda: self.lambda,
            k: self.k,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            predictor: PredictorSpec::two_layer(),
            encoder_opt: OptimizerConfig {
                kind: self.encoder_kind,
                weight_decay: self.weight_decay,
                schedule: LrSchedule::cosine(self.lr, self.steps, self.warmup)?,
            },
            predictor_opt: self.predictor_opt,
            dcorr_every: self.dcorr_every,
            monitor_size: self.monitor_size,
            ..AdminConfig::default()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslReport {
    pub lambda: f64,
    pub shape_accuracy: f64,
    pub color_accuracy: f64,
    /// On clean features of the unlabeled pool.
    pub mean_sq_dcorr: f64,
    /// Invariance loss at the last encoder step.
    pub invariance_loss: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct SslRun {
    pub encoder: Mlp,
    pub log: RunLog,
    pub report: SslReport,
}

const DCORR_ROWS: usize = 1024;

/// Trains without labels and evaluates attribute kNN on the frozen encoder.
pub fn train_ssl_toy(cfg: &SslConfig) -> Result<SslRun> {
    if cfg.pool_per_combo == 0 {
        return Err(Error::config("pool_per_combo must be positive"));
    }
    let game = cfg.game_config()?;
    let emb = ShapesEmbedding::new(&cfg.shapes)?;
    let pool = emb.sample(
        &all_combos(),
        cfg.pool_per_combo,
        &mut Rng::new(cfg.shapes.seed, streams::DATA),
    )?;
    let source = |n: usize, rng: &mut Rng| -> Result<Batch> {
        let rows: Vec<usize> = (0..n).map(|_| rng.index(pool.latent.rows())).collect();
        let latent = pool.latent.select_rows(&rows);
        let a = emb.embed(&latent, rng)?;
        let b = emb.embed(&latent, rng)?;
        Ok(Batch {
            views: vec![a, b],
            labels: None,
        })
    };
    let m = cfg.shapes.embed_dim;
    let mut encoder = Mlp::init(
        &[m, cfg.hidden, cfg.d],
        Activation::Relu,
        Activation::Identity,
        &mut Rng::new(cfg.seed, streams::ENCODER_INIT),
    )?;
    let mut bank = PredictorBank::new(
        cfg.d,
        game.predictor.clone(),
        &mut Rng::new(cfg.seed, streams::BANK_INIT),
    )?;
    let mut hook = InvarianceHook { eps: game.eps };
    let log = admin_train(&mut encoder, &mut bank, &source, &mut hook, &game)?;

    let invariance_loss = log.last().map_or(f64::NAN, |r| r.task_loss);
    let report = if log.diverged() {
        SslReport {
            lambda: cfg.lambda,
            shape_accuracy: f64::NAN,
            color_accuracy: f64::NAN,
            mean_sq_dcorr: f64::NAN,
            invariance_loss,
            diverged: true,
        }
    } else {
        let (shape_accuracy, color_accuracy) =
            attribute_knn(&encoder, &emb, cfg.eval_per_combo, cfg.knn_k, cfg.seed)?;
        let clean = emb.embed_clean(&pool.latent)?;
        let stride = (clean.rows() / DCORR_ROWS).max(1);
        let sub: Vec<usize> = (0..clean.rows()).step_by(stride).take(DCORR_ROWS).collect();
        SslReport {
            lambda: cfg.lambda,
            shape_accuracy,
            color_accuracy,
            mean_sq_dcorr: mean_sq_dcorr(&encoder.forward(&clean.select_rows(&sub))?)?,
            invariance_loss,
            diverged: false,
        }
    };
    Ok(SslRun {
        encoder,
        log,
        report,
    })
}

/// The configured run and its λ = 0 invariance-only control.
pub fn run_ssl_pair(cfg: &SslConfig) -> Result<(SslRun, SslRun)> {
    let control = SslConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    Ok((train_ssl_toy(cfg)?, train_ssl_toy(&control)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, FD_STEP};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed, 0);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identical_views_have_zero_invariance_loss() {
        let z = random(16, 3, 1);
        let (loss, g1, g2) = invariance_mse(&z, &z, 1e-5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g1.data().iter().chain(g2.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn invariance_gradient_matches_finite_differences() {
        let z1 = random(12, 3, 2);
        let z2 = random(12, 3, 3);
        let (_, g1, _) = invariance_mse(&z1, &z2, 1e-5).unwrap();
        let err = grad_check(
            |p| {
                let z = Matrix::from_vec(12, 3, p.to_vec())?;
                Ok(invariance_mse(&z, &z2, 1e-5)?.0)
            },
            g1.data(),
            z1.data(),
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn hook_needs_two_views() {
        let hook = InvarianceHook { eps: 1e-5 };
        let enc = Mlp::init(
            &[2, 2],
            Activation::Identity,
            Activation::Identity,
            &mut Rng::new(0, 0),
        )
        .unwrap();
        let z = random(4, 2, 4);
        let batch = Batch::single(z.clone());
        assert!(TaskHook::<Mlp>::evaluate(&hook, &enc, &batch, &[z]).is_err());
    }
}
