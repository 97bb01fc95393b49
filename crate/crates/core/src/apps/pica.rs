//! Linear (PCA/PICA) and nonlinear (NLPICA) dimension reduction of the
//! three-variable example `x = [5v₁, 3cos(2πv₁/√3), v₂]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pca::pca_svd;
use crate::diff::{dot, Activation, DenseLayer, Matrix, Mlp, OptimizerConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::game::{
    admin_train, AdminConfig, Batch, Encoder, Formulation, PredictorBank, PredictorSpec, RunLog,
    Standardizer, TaskEval, TaskHook, DEFAULT_EPS,
};
use crate::metrics::{covariance_matrix, dcorr};
use crate::synth::{pica_batch, streams, Rng};

/// Tied-weight linear autoencoder: `z = Wᵀx`, `x̂ = Wz` with `W ∈ ℝ^{l×d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAe {
    w: Matrix,
}

impl LinearAe {
    pub fn new(w: Matrix) -> Self {
        Self { w }
    }

    /// Glorot-uniform draw, then Gram-Schmidt to orthonormal columns.
    ///
    /// Raw draws can start with nearly parallel columns, and from there the
    /// game settles on two independent but low-variance mixtures.
    pub fn init(l: usize, d: usize, rng: &mut Rng) -> Self {
        let layer = DenseLayer::init(l, d, Activation::Identity, rng);
        let mut w = layer.weight.transpose();
        for j in 0..d {
            let mut c = w.column(j);
            for k in 0..j {
                let prev = w.column(k);
                let p = dot(&c, &prev);
                c.iter_mut().zip(&prev).for_each(|(v, q)| *v -= p * q);
            }
            let norm = dot(&c, &c).sqrt();
            c.iter_mut().for_each(|v| *v /= norm);
            w.set_column(j, &c);
        }
        Self { w }
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        z.matmul_t(&self.w)
    }
}

impl Encoder for LinearAe {
    type Cache = Matrix;

    fn input_dim(&self) -> usize {
        self.w.rows()
    }

    fn output_dim(&self) -> usize {
        self.w.cols()
    }

    fn encode(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.w)
    }

    fn encode_cached(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((x.matmul(&self.w)?, x.clone()))
    }

    fn param_grad(&self, x: &Matrix, upstream: &Matrix) -> Result<Vec<f64>> {
        Ok(x.t_matmul(upstream)?.into_data())
    }

    fn params(&self) -> Vec<f64> {
        self.w.data().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.w = Matrix::from_vec(self.w.rows(), self.w.cols(), params.to_vec())?;
        Ok(())
    }
}

/// `coef · E‖x − x̂‖²` through the tied decoder, plus an optional
/// `cov_weight · (1/d) Σ_{i≠j} Corr(z)_{ij}²` penalty.
#[derive(Clone, Debug)]
pub struct TiedReconHook {
    pub coef: f64,
    pub cov_weight: f64,
}

/// VCReg-style covariance term `(1/d) Σ_{i≠j} C_{ij}²` and its gradient,
/// with `C` the covariance of the batch-standardized `z` (its correlation matrix).
///
/// On raw `z` the squared batch covariance is biased upwards by
/// `V[z_i]V[z_j]/n`, which at small reconstruction weights is enough to
/// shrink the second component to zero.
pub fn offdiag_cov_penalty(z: &Matrix) -> Result<(f64, Matrix)> {
    let n = z.rows() as f64;
    let d = z.cols() as f64;
    let mut st = Standardizer::new(DEFAULT_EPS);
    let y = st.forward(z)?;
    let mut c = y.t_matmul(&y)?.scale(1.0 / n);
    let mut value = 0.0;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if i == j {
                c[(i, j)] = 0.0;
            } else {
                value += c[(i, j)] * c[(i, j)];
            }
        }
    }
    let grad_y = y.matmul(&c)?.scale(4.0 / (n * d));
    Ok((value / d, st.backward(&grad_y)?))
}

impl TaskHook<LinearAe> for TiedReconHook {
    fn evaluate(&self, ae: &LinearAe, batch: &Batch, z: &[Matrix]) -> Result<TaskEval> {
        let x = &batch.views[0];
        let z = &z[0];
        let n = x.rows() as f64;
        let resid = x.sub(&ae.decode(z)?)?;
        let mse = resid.data().iter().map(|v| v * v).sum::<f64>() / n;
        let mut grad_z = resid.matmul(ae.w())?.scale(-2.0 * self.coef / n);
        let grad_w = resid.t_matmul(z)?.scale(-2.0 * self.coef / n);
        let mut loss = self.coef * mse;
        if self.cov_weight > 0.0 {
            let (p, g) = offdiag_cov_penalty(z)?;
            loss += self.cov_weight * p;
            grad_z.axpy(self.cov_weight, &g)?;
        }
        Ok(TaskEval {
            loss,
            grad_z: vec![grad_z],
            grad_encoder: Some(grad_w.into_data()),
            grad_own: Vec::new(),
        })
    }
}

/// `coef · E‖x − g(z)‖²` with a separately parameterized decoder `g`.
#[derive(Clone, Debug)]
pub struct DecoderHook {
    pub coef: f64,
    pub decoder: Mlp,
    opt_cfg: OptimizerConfig,
    opt: OptimizerState,
}

impl DecoderHook {
    pub fn new(coef: f64, decoder: Mlp, opt_cfg: OptimizerConfig) -> Self {
        let opt = opt_cfg.build(decoder.param_count());
        Self {
            coef,
            decoder,
            opt_cfg,
            opt,
        }
    }

    pub fn mse(&self, x: &Matrix, z: &Matrix) -> Result<f64> {
        let resid = x.sub(&self.decoder.forward(z)?)?;
        Ok(resid.data().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
    }
}

impl<E: Encoder> TaskHook<E> for DecoderHook {
    fn evaluate(&self, _encoder: &E, batch: &Batch, z: &[Matrix]) -> Result<TaskEval> {
        let x = &batch.views[0];
        let n = x.rows() as f64;
        let (xh, cache) = self.decoder.forward_cached(&z[0])?;
        let resid = x.sub(&xh)?;
        let mse = resid.data().iter().map(|v| v * v).sum::<f64>() / n;
        let up = resid.scale(-2.0 * self.coef / n);
        let g = self.decoder.backward_cached(&cache, &up)?;
        Ok(TaskEval {
            loss: self.coef * mse,
            grad_z: vec![g.input],
            grad_encoder: None,
            grad_own: g.params,
        })
    }

    fn apply(&mut self, eval: &TaskEval, step: usize) -> Result<()> {
        let mut p = self.decoder.params();
        self.opt
            .step(&mut p, &eval.grad_own, self.opt_cfg.schedule.lr_at(step))?;
        self.decoder.set_params(&p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicaMethod {
    /// Closed-form principal components.
    PcaSvd,
    /// Tied linear autoencoder with an off-diagonal covariance penalty.
    PcaCovreg,
    /// Tied linear autoencoder against linear dependency predictors.
    PcaLinearPred,
    /// Tied linear autoencoder against two-layer dependency predictors.
    PicaNonlinear,
    /// Two-layer encoder and decoder against two-layer dependency predictors.
    Nlpica,
}

impl PicaMethod {
    pub const ALL: [PicaMethod; 5] = [
        PicaMethod::PcaSvd,
        PicaMethod::PcaCovreg,
        PicaMethod::PcaLinearPred,
        PicaMethod::PicaNonlinear,
        PicaMethod::Nlpica,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PicaMethod::PcaSvd => "pca_svd",
            PicaMethod::PcaCovreg => "pca_covreg",
            PicaMethod::PcaLinearPred => "pca_linear_pred",
            PicaMethod::PicaNonlinear => "pica_nonlinear",
            PicaMethod::Nlpica => "nlpica",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicaConfig {
    pub d: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub k: usize,
    /// Weight of the dependence (or covariance) penalty.
    pub lambda: f64,
    pub recon_coef: f64,
    pub encoder_lr: f64,
    pub predictor_lr: f64,
    /// Hidden width of the NLPICA encoder and decoder.
    pub nl_hidden: usize,
    pub eval_size: usize,
    /// Rows of the evaluation set used for the (quadratic-cost) distance correlation.
    pub dcorr_size: usize,
    pub scatter_rows: usize,
    pub seed: u64,
}

impl Default for PicaConfig {
    fn default() -> Self {
        Self {
            d: 2,
            steps: 5000,
            batch_size: 512,
            k: 16,
            lambda: 1.0,
            recon_coef: 0.02,
            encoder_lr: 5e-3,
            predictor_lr: 2e-2,
            nl_hidden: 32,
            eval_size: 100_000,
            dcorr_size: 4096,
            scatter_rows: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicaReport {
    pub method: PicaMethod,
    /// Projection matrix (linear methods only).
    pub w: Option<Matrix>,
    /// `|W|` with unit-norm columns.
    pub w_abs: Option<Matrix>,
    /// Total variance of the representation.
    pub explained_variance: f64,
    /// `E‖x − x̂‖²`, summed over the observed coordinates.
    pub recon_mse: f64,
    pub dcorr_z: f64,
    /// Largest absolute off-diagonal entry of `Cov(z)`.
    pub max_abs_offdiag_cov: f64,
}

/// Everything a run produces; the report is the serializable summary.
#[derive(Clone, Debug)]
pub struct PicaRun {
    pub report: PicaReport,
    pub log: Option<RunLog>,
    /// Rows `(z₁, z₂, v₁, v₂)` from the evaluation set.
    pub scatter: Matrix,
}

impl PicaRun {
    pub fn diverged(&self) -> bool {
        self.log.as_ref().is_some_and(RunLog::diverged)
    }
}

pub fn write_scatter_csv<W: Write>(scatter: &Matrix, mut w: W) -> Result<()> {
    writeln!(w, "z1,z2,v1,v2")?;
    for r in scatter.row_iter() {
        let fields: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// `|W|` with each column scaled to unit l2 norm.
pub fn column_normalized_abs(w: &Matrix) -> Matrix {
    let mut out = w.map(f64::abs);
    for j in 0..out.cols() {
        let c = out.column(j);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scaled: Vec<f64> = c.iter().map(|v| v / norm).collect();
            out.set_column(j, &scaled);
        }
    }
    out
}

/// Greedily matches each target axis to the unused column with the largest
/// `|cosine|` and returns the largest entry-wise deviation of the matched
/// columns from their unit axes.
pub fn selection_error(w_abs: &Matrix, targets: &[usize]) -> Result<f64> {
    if targets.len() != w_abs.cols() || targets.iter().any(|&t| t >= w_abs.rows()) {
        return Err(Error::dim(
            "one target axis per column, each within the input width",
        ));
    }
    let mut used = vec![false; w_abs.cols()];
    let mut worst: f64 = 0.0;
    for &t in targets {
        let j = (0..w_abs.cols())
            .filter(|&j| !used[j])
            .max_by(|&a, &b| w_abs[(t, a)].total_cmp(&w_abs[(t, b)]))
            .expect("one column per target");
        used[j] = true;
        for r in 0..w_abs.rows() {
            let target = if r == t { 1.0 } else { 0.0 };
            worst = worst.max((w_abs[(r, j)] - target).abs());
        }
    }
    Ok(worst)
}

fn pica_source(n: usize, rng: &mut Rng) -> Result<Batch> {
    Ok(Batch::single(pica_batch(n, rng).1))
}

fn validate(cfg: &PicaConfig) -> Result<()> {
    if cfg.d < 2 || cfg.d > 3 {
        return Err(Error::config(format!(
            "d must be 2 or 3 for 3 observed variables, got {}",
            cfg.d
        )));
    }
    if cfg.eval_size < 4 || cfg.dcorr_size < 4 {
        return Err(Error::config("evaluation sizes must be at least 4"));
    }
    Ok(())
}

fn game_config(cfg: &PicaConfig, predictor: PredictorSpec, lambda: f64, k: usize) -> AdminConfig {
    AdminConfig {
        formulation: Formulation::Standardized,
        lambda,
        k,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        predictor,
        encoder_opt: OptimizerConfig::adam(cfg.encoder_lr),
        predictor_opt: OptimizerConfig::adam(cfg.predictor_lr),
        monitor_size: cfg.batch_size,
        ..AdminConfig::default()
    }
}

fn report(
    method: PicaMethod,
    cfg: &PicaConfig,
    encode: impl Fn(&Matrix) -> Result<Matrix>,
    decode: impl Fn(&Matrix) -> Result<Matrix>,
    w: Option<Matrix>,
) -> Result<(PicaReport, Matrix)> {
    let (latents, x) = pica_batch(cfg.eval_size, &mut Rng::new(cfg.seed, streams::EVAL));
    let z = encode(&x)?;
    if !z.is_finite() {
        return Err(Error::NonFinite(
            "representation of the evaluation set".into(),
        ));
    }
    let cov = covariance_matrix(&z)?;
    let explained_variance = (0..cov.rows()).map(|i| cov[(i, i)]).sum();
    let mut max_off: f64 = 0.0;
    for i in 0..cov.rows() {
        for j in 0..cov.cols() {
            if i != j {
                max_off = max_off.max(cov[(i, j)].abs());
            }
        }
    }
    let resid = x.sub(&decode(&z)?)?;
    let recon_mse = resid.data().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64;
    let m = cfg.dcorr_size.min(cfg.eval_size);
    let head: Vec<usize> = (0..m).collect();
    let zs = z.select_rows(&head);
    let dcorr_z = dcorr(&zs.select_columns(&[0]), &zs.select_columns(&[1]))?;

    let rows: Vec<usize> = (0..cfg.scatter_rows.min(cfg.eval_size)).collect();
    let mut scatter = Matrix::zeros(rows.len(), 4);
    for (i, &r) in rows.iter().enumerate() {
        scatter.row_mut(i).copy_from_slice(&[
            z[(r, 0)],
            z[(r, 1)],
            latents[(r, 0)],
            latents[(r, 1)],
        ]);
    }
    Ok((
        PicaReport {
            method,
            w_abs: w.as_ref().map(column_normalized_abs),
            w,
            explained_variance,
            recon_mse,
            dcorr_z,
            max_abs_offdiag_cov: max_off,
        },
        scatter,
    ))
}

/// Runs one reduction method on the example and evaluates it on a fresh sample.
pub fn run_pica(method: PicaMethod, cfg: &PicaConfig) -> Result<PicaRun> {
    validate(cfg)?;
    if method == PicaMethod::Nlpica {
        return run_nlpica(cfg);
    }
    if method == PicaMethod::PcaSvd {
        let (_, x) = pica_batch(cfg.eval_size, &mut Rng::new(cfg.seed, streams::DATA));
        let fit = pca_svd(&x, cfg.d)?;
        let w = fit.components.clone();
        let (report, scatter) = report(
            method,
            cfg,
            |x| fit.project(x),
            |z| z.matmul_t(&w),
            Some(w.clone()),
        )?;
        return Ok(PicaRun {
            report,
            log: None,
            scatter,
        });
    }

    let mut ae = LinearAe::init(3, cfg.d, &mut Rng::new(cfg.seed, streams::ENCODER_INIT));
    let (game, mut hook) = match method {
        // the covariance penalty replaces the game; the predictors only monitor
        PicaMethod::PcaCovreg => (
            game_config(cfg, PredictorSpec::linear(), 0.0, 1),
            TiedReconHook {
                coef: cfg.recon_coef,
                cov_weight: cfg.lambda,
            },
        ),
        PicaMethod::PcaLinearPred => (
            game_config(cfg, PredictorSpec::linear(), cfg.lambda, cfg.k),
            TiedReconHook {
                coef: cfg.recon_coef,
                cov_weight: 0.0,
            },
        ),
        _ => (
            game_config(cfg, PredictorSpec::two_layer(), cfg.lambda, cfg.k),
            TiedReconHook {
                coef: cfg.recon_coef,
                cov_weight: 0.0,
            },
        ),
    };
    let mut bank = PredictorBank::new(
        cfg.d,
        game.predictor.clone(),
        &mut Rng::new(cfg.seed, streams::BANK_INIT),
    )?;
    let log = admin_train(&mut ae, &mut bank, &pica_source, &mut hook, &game)?;
    if log.diverged() {
        return Ok(PicaRun {
            report: PicaReport {
                method,
                w: Some(ae.w().clone()),
                w_abs: None,
                explained_variance: f64::NAN,
                recon_mse: f64::NAN,
                dcorr_z: f64::NAN,
                max_abs_offdiag_cov: f64::NAN,
            },
            log: Some(log),
            scatter: Matrix::zeros(0, 4),
        });
    }
    let w = ae.w().clone();
    let (report, scatter) = report(method, cfg, |x| ae.encode(x), |z| ae.decode(z), Some(w))?;
    Ok(PicaRun {
        report,
        log: Some(log),
        scatter,
    })
}

/// Nonlinear encoder and decoder (one hidden GELU layer each) under the
/// standardized game; `lambda = 0` is plain NLPCA.
pub fn run_nlpica(cfg: &PicaConfig) -> Result<PicaRun> {
    validate(cfg)?;
    let mut enc_rng = Rng::new(cfg.seed, streams::ENCODER_INIT);
    let mut encoder = Mlp::init(
        &[3, cfg.nl_hidden, cfg.d],
        Activation::Gelu,
        Activation::Identity,
        &mut enc_rng,
    )?;
    let decoder = Mlp::init(
        &[cfg.d, cfg.nl_hidden, 3],
        Activation::Gelu,
        Activation::Identity,
        &mut enc_rng,
    )?;
    let mut hook = DecoderHook::new(
        cfg.recon_coef,
        decoder,
        OptimizerConfig::adam(cfg.encoder_lr),
    );
    let game = game_config(cfg, PredictorSpec::two_layer(), cfg.lambda, cfg.k);
    let mut bank = PredictorBank::new(
        cfg.d,
        game.predictor.clone(),
        &mut Rng::new(cfg.seed, streams::BANK_INIT),
    )?;
    let log = admin_train(&mut encoder, &mut bank, &pica_source, &mut hook, &game)?;
    if log.diverged() {
        return Ok(PicaRun {
            report: PicaReport {
                method: PicaMethod::Nlpica,
                w: None,
                w_abs: None,
                explained_variance: f64::NAN,
                recon_mse: f64::NAN,
                dcorr_z: f64::NAN,
                max_abs_offdiag_cov: f64::NAN,
            },
            log: Some(log),
            scatter: Matrix::zeros(0, 4),
        });
    }
    let (report, scatter) = report(
        PicaMethod::Nlpica,
        cfg,
        |x| encoder.forward(x),
        |z| hook.decoder.forward(z),
        None,
    )?;
    Ok(PicaRun {
        report,
        log: Some(log),
        scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, FD_STEP};
    use crate::game::encoder_objective;

    #[test]
    fn linear_ae_gradients() {
        let mut rng = Rng::new(1, 0);
        let ae = LinearAe::init(3, 2, &mut rng);
        let x = pica_batch(16, &mut rng).1;
        let batch = Batch::single(x);
        let hook = TiedReconHook {
            coef: 0.3,
            cov_weight: 0.7,
        };
        let cfg = AdminConfig {
            lambda: 0.0,
            ..AdminConfig::default()
        };
        let bank = PredictorBank::new(2, PredictorSpec::linear(), &mut rng).unwrap();
        let eval = encoder_objective(&ae, &bank, &batch, &hook, &cfg).unwrap();
        let mut probe = ae.clone();
        let err = grad_check(
            |p| {
                probe.set_params(p)?;
                let z = probe.encode(&batch.views[0])?;
                Ok(hook.evaluate(&probe, &batch, &[z])?.loss)
            },
            &eval.grads,
            &ae.params(),
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn covariance_penalty_vanishes_on_axis_data() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let (p, g) = offdiag_cov_penalty(&z).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));
        let z = Matrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap();
        // fully correlated pair: (1 + 1) / 2, up to the eps guard
        assert!((offdiag_cov_penalty(&z).unwrap().0 - 1.0).abs() < 1e-4);
        let mut rng = Rng::new(5, 0);
        let z = Matrix::from_vec(7, 3, (0..21).map(|_| rng.normal()).collect()).unwrap();
        let (_, g) = offdiag_cov_penalty(&z).unwrap();
        let err = grad_check(
            |p| Ok(offdiag_cov_penalty(&Matrix::from_vec(7, 3, p.to_vec())?)?.0),
            g.data(),
            z.data(),
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn pca_svd_selects_the_first_two_observations() {
        let cfg = PicaConfig {
            eval_size: 20_000,
            ..PicaConfig::default()
        };
        let run = run_pica(PicaMethod::PcaSvd, &cfg).unwrap();
        let w_abs = run.report.w_abs.unwrap();
        assert!(selection_error(&w_abs, &[0, 1]).unwrap() < 0.05);
        assert!((run.report.explained_variance - 29.5).abs() < 1.0);
        // x₃ is dropped, so the residual is its unit variance
        assert!((run.report.recon_mse - 1.0).abs() < 0.05);
        assert!((run.report.dcorr_z - 0.25).abs() < 0.05);
    }

    #[test]
    fn selection_error_is_permutation_and_sign_free() {
        let w = Matrix::from_rows(&[[0.0, -2.0], [0.0, 0.0], [0.5, 0.0]]).unwrap();
        let w_abs = column_normalized_abs(&w);
        assert_eq!(selection_error(&w_abs, &[0, 2]).unwrap(), 0.0);
        assert_eq!(selection_error(&w_abs, &[2, 0]).unwrap(), 0.0);
        assert_eq!(selection_error(&w_abs, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn scatter_csv_has_four_columns() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.5]]).unwrap();
        let mut buf = Vec::new();
        write_scatter_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "z1,z2,v1,v2\n1,2,3,4.5\n");
    }
}
