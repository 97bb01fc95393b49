//! The alternating loop: `k` predictor updates, then one encoder update.

use super::bank::PredictorBank;
use super::config::{AdminConfig, Formulation};
use super::loss::{
    margin_adversarial, predictor_loss_grad, standardized_adversarial, unbounded_adversarial,
    LossGrad,
};
use super::runlog::{Divergence, ProbeRecord, RunLog, StepRecord};
use super::standardize::{standardize, Standardizer};
use crate::diff::{Matrix, Mlp, MlpCache, OptimizerState};
use crate::error::{Error, Result};
use crate::metrics::{corr_summary, mean_abs_pearson, mean_sq_dcorr};
use crate::synth::{streams, Rng};

/// A differentiable map from inputs to representations with a flat parameter vector.
pub trait Encoder {
    type Cache;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn encode(&self, x: &Matrix) -> Result<Matrix>;
    fn encode_cached(&self, x: &Matrix) -> Result<(Matrix, Self::Cache)>;
    /// Parameter gradient of `⟨upstream, encode(x)⟩`.
    fn param_grad(&self, cache: &Self::Cache, upstream: &Matrix) -> Result<Vec<f64>>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
}

impl Encoder for Mlp {
    type Cache = MlpCache;

    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }

    fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x)
    }

    fn encode_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.forward_cached(x)
    }

    fn param_grad(&self, cache: &MlpCache, upstream: &Matrix) -> Result<Vec<f64>> {
        Ok(self.backward_cached(cache, upstream)?.params)
    }

    fn params(&self) -> Vec<f64> {
        Mlp::params(self)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        Mlp::set_params(self, params)
    }
}

/// A minibatch: one input matrix per view (row `r` of every view is the
/// same underlying sample) and optional class labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub views: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn single(x: Matrix) -> Self {
        Self {
            views: vec![x],
            labels: None,
        }
    }
}

pub trait DataSource {
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch>;
}

impl<F> DataSource for F
where
    F: Fn(usize, &mut Rng) -> Result<Batch>,
{
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        self(n, rng)
    }
}

/// Task term of the encoder objective.
#[derive(Clone, Debug, Default)]
pub struct TaskEval {
    pub loss: f64,
    /// Gradient w.r.t. each view's raw representation; empty when the task ignores `z`.
    pub grad_z: Vec<Matrix>,
    /// Direct encoder-parameter gradient for tasks that reuse encoder weights (tied decoders).
    pub grad_encoder: Option<Vec<f64>>,
    /// Gradient of the hook's own parameters, consumed by [`TaskHook::apply`].
    pub grad_own: Vec<f64>,
}

pub trait TaskHook<E: Encoder> {
    fn evaluate(&self, encoder: &E, batch: &Batch, z: &[Matrix]) -> Result<TaskEval>;

    /// Updates hook-owned parameters after an encoder step.
    fn apply(&mut self, _eval: &TaskEval, _step: usize) -> Result<()> {
        Ok(())
    }
}

/// No task term: the encoder plays only the adversarial game.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoTask;

impl<E: Encoder> TaskHook<E> for NoTask {
    fn evaluate(&self, _encoder: &E, _batch: &Batch, _z: &[Matrix]) -> Result<TaskEval> {
        Ok(TaskEval::default())
    }
}

/// What the predictors see: standardized `z` for the standardized game, raw `z` otherwise.
pub fn predictor_view(z: &Matrix, cfg: &AdminConfig) -> Result<Matrix> {
    match cfg.formulation {
        Formulation::Standardized => standardize(z, cfg.eps),
        _ => Ok(z.clone()),
    }
}

/// Predictor loss on `batch` and its gradient w.r.t. the bank parameters, averaged over views.
pub fn predictor_objective<E: Encoder>(
    encoder: &E,
    bank: &PredictorBank,
    batch: &Batch,
    cfg: &AdminConfig,
) -> Result<(f64, Vec<f64>)> {
    let views = batch.views.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; bank.param_count()];
    for x in &batch.views {
        let target = predictor_view(&encoder.encode(x)?, cfg)?;
        let (zhat, cache) = bank.forward_cached(&target)?;
        let lg = predictor_loss_grad(&target, &zhat, cfg.effective_distance())?;
        let (gp, _) = bank.backward_cached(&cache, &lg.grad_zhat)?;
        loss += lg.value / views;
        for (g, v) in grads.iter_mut().zip(gp) {
            *g += v / views;
        }
    }
    Ok((loss, grads))
}

/// Adversarial loss of one view and its gradient w.r.t. the raw representation.
///
/// The gradient flows through the (frozen) bank into its inputs and, for
/// the standardized game, through the batch statistics.
pub fn adversarial_objective(
    z: &Matrix,
    bank: &PredictorBank,
    cfg: &AdminConfig,
) -> Result<(f64, Matrix)> {
    let dist = cfg.effective_distance();
    let loss = |a: &Matrix, b: &Matrix| -> Result<LossGrad> {
        match cfg.formulation {
            Formulation::Standardized => standardized_adversarial(a, b),
            Formulation::Margin => margin_adversarial(a, b, dist, cfg.margin),
            Formulation::Unbounded => unbounded_adversarial(a, b, dist),
        }
    };
    match cfg.formulation {
        Formulation::Standardized => {
            let mut st = Standardizer::new(cfg.eps);
            let y = st.forward(z)?;
            let (yhat, cache) = bank.forward_cached(&y)?;
            let mut lg = loss(&y, &yhat)?;
            let (_, through_bank) = bank.backward_cached(&cache, &lg.grad_zhat)?;
            lg.grad_z.add_assign(&through_bank)?;
            Ok((lg.value, st.backward(&lg.grad_z)?))
        }
        _ => {
            let (zhat, cache) = bank.forward_cached(z)?;
            let mut lg = loss(z, &zhat)?;
            let (_, through_bank) = bank.backward_cached(&cache, &lg.grad_zhat)?;
            lg.grad_z.add_assign(&through_bank)?;
            Ok((lg.value, lg.grad_z))
        }
    }
}

/// Adversarial loss value only.
pub fn adversarial_value(z: &Matrix, bank: &PredictorBank, cfg: &AdminConfig) -> Result<f64> {
    let dist = cfg.effective_distance();
    let y = predictor_view(z, cfg)?;
    let yhat = bank.forward(&y)?;
    Ok(match cfg.formulation {
        Formulation::Standardized => standardized_adversarial(&y, &yhat)?.value,
        Formulation::Margin => margin_adversarial(&y, &yhat, dist, cfg.margin)?.value,
        Formulation::Unbounded => unbounded_adversarial(&y, &yhat, dist)?.value,
    })
}

/// Result of evaluating the encoder objective `λ·L_adv + task` on one batch.
#[derive(Clone, Debug)]
pub struct EncoderEval {
    /// Unweighted adversarial loss averaged over views.
    pub adv_loss: f64,
    pub task_loss: f64,
    /// `λ·adv_loss + task_loss`, the quantity the gradient belongs to.
    pub total: f64,
    pub grads: Vec<f64>,
    /// Raw representation of every view.
    pub z: Vec<Matrix>,
    pub task: TaskEval,
}

pub fn encoder_objective<E: Encoder, T: TaskHook<E>>(
    encoder: &E,
    bank: &PredictorBank,
    batch: &Batch,
    task: &T,
    cfg: &AdminConfig,
) -> Result<EncoderEval> {
    let views = batch.views.len();
    let mut zs = Vec::with_capacity(views);
    let mut caches = Vec::with_capacity(views);
    for x in &batch.views {
        let (z, c) = encoder.encode_cached(x)?;
        zs.push(z);
        caches.push(c);
    }
    let mut upstream: Vec<Matrix> = zs
        .iter()
        .map(|z| Matrix::zeros(z.rows(), z.cols()))
        .collect();

    let weight = cfg.lambda / views as f64;
    let mut adv_loss = 0.0;
    for (z, up) in zs.iter().zip(&mut upstream) {
        if cfg.lambda > 0.0 {
            let (v, g) = adversarial_objective(z, bank, cfg)?;
            up.axpy(weight, &g)?;
            adv_loss += v / views as f64;
        } else {
            adv_loss += adversarial_value(z, bank, cfg)? / views as f64;
        }
    }

    let task_eval = task.evaluate(encoder, batch, &zs)?;
    if !task_eval.grad_z.is_empty() {
        if task_eval.grad_z.len() != views {
            return Err(Error::dim(format!(
                "task returned {} representation gradients for {views} views",
                task_eval.grad_z.len()
            )));
        }
        for (up, g) in upstream.iter_mut().zip(&task_eval.grad_z) {
            up.add_assign(g)?;
        }
    }

    let mut grads = vec![0.0; encoder.params().len()];
    for (c, up) in caches.iter().zip(&upstream) {
        for (g, v) in grads.iter_mut().zip(encoder.param_grad(c, up)?) {
            *g += v;
        }
    }
    if let Some(extra) = &task_eval.grad_encoder {
        if extra.len() != grads.len() {
            return Err(Error::dim("task encoder gradient has the wrong length"));
        }
        for (g, v) in grads.iter_mut().zip(extra) {
            *g += v;
        }
    }
    Ok(EncoderEval {
        adv_loss,
        task_loss: task_eval.loss,
        total: cfg.lambda * adv_loss + task_eval.loss,
        grads,
        z: zs,
        task: task_eval,
    })
}

/// One predictor update; the encoder is only borrowed immutably.
pub fn predictor_step<E: Encoder>(
    encoder: &E,
    bank: &mut PredictorBank,
    opt: &mut OptimizerState,
    batch: &Batch,
    cfg: &AdminConfig,
    step: usize,
) -> Result<f64> {
    let (loss, grads) = predictor_objective(encoder, bank, batch, cfg)?;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step,
            what: format!("predictor loss {loss}"),
        });
    }
    let mut params = bank.params();
    let lr = cfg.predictor_opt.schedule.lr_at(step);
    opt.step(&mut params, &grads, lr)
        .map_err(|e| with_step(e, step))?;
    bank.set_params(&params)?;
    Ok(loss)
}

/// One encoder update; the bank is only borrowed immutably.
pub fn encoder_step<E: Encoder, T: TaskHook<E>>(
    encoder: &mut E,
    bank: &PredictorBank,
    task: &mut T,
    opt: &mut OptimizerState,
    batch: &Batch,
    cfg: &AdminConfig,
    step: usize,
) -> Result<EncoderEval> {
    let eval = encoder_objective(encoder, bank, batch, task, cfg)?;
    if !eval.total.is_finite() {
        return Err(Error::Diverged {
            step,
            what: format!("encoder objective {}", eval.total),
        });
    }
    let mut params = encoder.params();
    let lr = cfg.encoder_opt.schedule.lr_at(step);
    opt.step(&mut params, &eval.grads, lr)
        .map_err(|e| with_step(e, step))?;
    encoder.set_params(&params)?;
    task.apply(&eval.task, step)?;
    Ok(eval)
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Diverged { what, .. } => Error::Diverged { step, what },
        other => other,
    }
}

/// Runs the game for `cfg.steps` encoder updates, training `encoder`,
/// `bank` and the task hook in place.
///
/// A non-finite loss or gradient stops the run; the returned log then
/// carries the records so far and a [`Divergence`].
pub fn admin_train<E, S, T>(
    encoder: &mut E,
    bank: &mut PredictorBank,
    source: &S,
    task: &mut T,
    cfg: &AdminConfig,
) -> Result<RunLog>
where
    E: Encoder,
    S: DataSource,
    T: TaskHook<E>,
{
    let d = encoder.output_dim();
    cfg.validate(d)?;
    if bank.dim() != d {
        return Err(Error::dim(format!(
            "encoder emits {d} dimensions but the bank has {} predictors",
            bank.dim()
        )));
    }
    let mut log = RunLog::new(cfg.clone());
    let mut enc_opt = cfg.encoder_opt.build(encoder.params().len());
    let mut pred_opt = cfg.predictor_opt.build(bank.param_count());
    let mut pred_rng = Rng::new(cfg.seed, streams::PREDICTOR_BATCHES);
    let mut enc_rng = Rng::new(cfg.seed, streams::ENCODER_BATCHES);
    let monitor = source
        .sample(cfg.monitor_size, &mut Rng::new(cfg.seed, streams::MONITOR))?
        .views
        .swap_remove(0);

    log.probes.push(ProbeRecord {
        step: 0,
        mean_sq_dcorr: mean_sq_dcorr(&encoder.encode(&monitor)?)?,
    });

    for step in 1..=cfg.steps {
        let mut pred_loss = 0.0;
        let mut outcome = Ok(());
        for _ in 0..cfg.k {
            let batch = source.sample(cfg.batch_size, &mut pred_rng)?;
            match predictor_step(encoder, bank, &mut pred_opt, &batch, cfg, step) {
                Ok(l) => pred_loss += l / cfg.k as f64,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        let eval = outcome.and_then(|_| {
            let batch = source.sample(cfg.batch_size, &mut enc_rng)?;
            encoder_step(encoder, bank, task, &mut enc_opt, &batch, cfg, step)
        });
        let eval = match eval {
            Ok(e) => e,
            Err(Error::Diverged { step, what }) => {
                log.divergence = Some(Divergence { step, what });
                return Ok(log);
            }
            Err(e) => return Err(e),
        };

        let z0 = &eval.z[0];
        log.steps.push(StepRecord {
            step,
            predictor_loss: pred_loss,
            encoder_adv_loss: eval.adv_loss,
            task_loss: eval.task_loss,
            mean_abs_pearson: mean_abs_pearson(z0).0,
            mean_norm: z0.mean_row_norm(),
        });

        let probe = step == cfg.steps || (cfg.dcorr_every > 0 && step % cfg.dcorr_every == 0);
        if probe {
            let zm = encoder.encode(&monitor)?;
            if !zm.is_finite() {
                log.divergence = Some(Divergence {
                    step,
                    what: "non-finite representation on the monitor batch".into(),
                });
                return Ok(log);
            }
            log.probes.push(ProbeRecord {
                step,
                mean_sq_dcorr: mean_sq_dcorr(&zm)?,
            });
        }
    }
    log.summary = Some(corr_summary(&encoder.encode(&monitor)?)?);
    Ok(log)
}

/// Trains the encoder on the task term alone, drawing batches from the
/// same stream `admin_train` uses for encoder updates.
pub fn task_only_train<E, S, T>(
    encoder: &mut E,
    source: &S,
    task: &mut T,
    cfg: &AdminConfig,
) -> Result<Vec<f64>>
where
    E: Encoder,
    S: DataSource,
    T: TaskHook<E>,
{
    let mut opt = cfg.encoder_opt.build(encoder.params().len());
    let mut rng = Rng::new(cfg.seed, streams::ENCODER_BATCHES);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = source.sample(cfg.batch_size, &mut rng)?;
        let mut zs = Vec::new();
        let mut caches = Vec::new();
        for x in &batch.views {
            let (z, c) = encoder.encode_cached(x)?;
            zs.push(z);
            caches.push(c);
        }
        let eval = task.evaluate(encoder, &batch, &zs)?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: format!("task loss {}", eval.loss),
            });
        }
        let mut grads = vec![0.0; encoder.params().len()];
        for (c, g) in caches.iter().zip(&eval.grad_z) {
            for (a, b) in grads.iter_mut().zip(encoder.param_grad(c, g)?) {
                *a += b;
            }
        }
        if let Some(extra) = &eval.grad_encoder {
            for (a, b) in grads.iter_mut().zip(extra) {
                *a += b;
            }
        }
        let mut params = encoder.params();
        opt.step(&mut params, &grads, cfg.encoder_opt.schedule.lr_at(step))?;
        encoder.set_params(&params)?;
        task.apply(&eval, step)?;
        losses.push(eval.loss);
    }
    Ok(losses)
}
