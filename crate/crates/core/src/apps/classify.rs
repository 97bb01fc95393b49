//! Shape-blind classification: a classifier trained on color-determined
//! classes, with and without the dependence game, probed for the shape
//! attribute it never needed.

use serde::{Deserialize, Serialize};

use super::knn::{knn_eval, knn_predict};
use crate::diff::{
    Activation, LrSchedule, Matrix, Mlp, OptimizerConfig, OptimizerKind, OptimizerState,
};
use crate::error::{Error, Result};
use crate::game::{
    admin_train, AdminConfig, Batch, Distance, Encoder, Formulation, PredictorBank, PredictorSpec,
    RunLog, TaskEval, TaskHook,
};
use crate::metrics::mean_sq_dcorr;
use crate::synth::{
    all_combos, gen_shapes_dataset, streams, LabeledDataset, Rng, ShapesConfig, ShapesEmbedding,
    Split,
};

/// Linear softmax head `Wz + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `n_c × d`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::dim(format!(
                "{} classes but {} biases",
                w.rows(),
                b.len()
            )));
        }
        Ok(Self { w, b })
    }

    /// Uniform(±1/√d) weights, zero bias.
    pub fn init(d: usize, classes: usize, rng: &mut Rng) -> Self {
        let a = 1.0 / (d as f64).sqrt();
        let data = (0..classes * d).map(|_| rng.uniform(-a, a)).collect();
        Self {
            w: Matrix::from_vec(classes, d, data).expect("sized buffer"),
            b: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.matmul_t(&self.w)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, z: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        Ok(logits.row_iter().map(argmax).collect())
    }

    pub fn params(&self) -> Vec<f64> {
        [self.w.data(), &self.b[..]].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let nw = self.w.data().len();
        if p.len() != nw + self.b.len() {
            return Err(Error::dim("head parameter count"));
        }
        self.w.data_mut().copy_from_slice(&p[..nw]);
        self.b.copy_from_slice(&p[nw..]);
        Ok(())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::config(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += m + sum.ln() - row[y];
        let g = grad.row_mut(i);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = (v - m).exp() / sum / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Cross-entropy task term with a head trained by its own optimizer.
#[derive(Clone, Debug)]
pub struct CrossEntropyHook {
    pub head: ClassifierHead,
    opt_cfg: OptimizerConfig,
    opt: OptimizerState,
}

impl CrossEntropyHook {
    pub fn new(head: ClassifierHead, opt_cfg: OptimizerConfig) -> Self {
        let opt = opt_cfg.build(head.params().len());
        Self { head, opt_cfg, opt }
    }
}

impl<E: Encoder> TaskHook<E> for CrossEntropyHook {
    fn evaluate(&self, _encoder: &E, batch: &Batch, z: &[Matrix]) -> Result<TaskEval> {
        let labels = batch
            .labels
            .as_ref()
            .ok_or_else(|| Error::config("cross-entropy needs labelled batches"))?;
        let z = &z[0];
        let (loss, g) = softmax_cross_entropy(&self.head.logits(z)?, labels)?;
        let grad_w = g.t_matmul(z)?;
        let grad_b = (0..g.cols())
            .map(|j| g.column(j).iter().sum())
            .collect::<Vec<f64>>();
        Ok(TaskEval {
            loss,
            grad_z: vec![g.matmul(&self.head.w)?],
            grad_encoder: None,
            grad_own: [grad_w.data(), &grad_b[..]].concat(),
        })
    }

    fn apply(&mut self, eval: &TaskEval, step: usize) -> Result<()> {
        let mut p = self.head.params();
        self.opt
            .step(&mut p, &eval.grad_own, self.opt_cfg.schedule.lr_at(step))?;
        self.head.set_params(&p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub shapes: ShapesConfig,
    pub hidden: usize,
    pub d: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
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
    /// Rows per `(shape, color)` pair in each of the kNN reference and query sets.
    pub eval_per_combo: usize,
    pub monitor_size: usize,
    pub dcorr_every: usize,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            shapes: ShapesConfig::default(),
            hidden: 64,
            // fewer dimensions than within-class factors, so the predictors can be beaten
            d: 5,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            steps: 2000,
            warmup: 100,
            batch_size: 256,
            lr: 1e-3,
            encoder_kind: OptimizerKind::adam(),
            // strong decoupled decay is what makes the baseline drop within-class detail
            weight_decay: 2.0,
            predictor_opt: OptimizerConfig::adam(1e-2),
            k: 1,
            formulation: Formulation::Margin,
            distance: Distance::L1,
            margin: 0.4,
            lambda: 5.0,
            knn_k: super::knn::DEFAULT_K,
            eval_per_combo: 500,
            monitor_size: 512,
            dcorr_every: 0,
            seed: 0,
        }
    }
}

impl ClassifyConfig {
    /// Game settings; the baseline keeps the predictors (as monitors) but zeroes λ.
    pub fn game_config(&self, use_admin: bool) -> Result<AdminConfig> {
        let schedule = LrSchedule::cosine(self.lr, self.steps, self.warmup)?;
        Ok(AdminConfig {
            formulation: self.formulation,
            distance: self.distance,
            margin: self.margin,
            lambda: if use_admin { self.lambda } else { 0.0 },
            k: self.k,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            predictor: PredictorSpec::two_layer(),
            encoder_opt: self.encoder_opt(schedule),
            predictor_opt: self.predictor_opt,
            dcorr_every: self.dcorr_every,
            monitor_size: self.monitor_size,
            ..AdminConfig::default()
        })
    }

    fn encoder_opt(&self, schedule: LrSchedule) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.encoder_kind,
            weight_decay: self.weight_decay,
            schedule,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierRun {
    pub encoder: Mlp,
    pub head: ClassifierHead,
    pub log: RunLog,
}

/// Minibatches drawn uniformly with replacement from the training split.
fn train_source(ds: &LabeledDataset) -> impl Fn(usize, &mut Rng) -> Result<Batch> + '_ {
    let idx = ds.indices(Split::Train);
    move |n: usize, rng: &mut Rng| {
        let rows: Vec<usize> = (0..n).map(|_| idx[rng.index(idx.len())]).collect();
        let labels = rows
            .iter()
            .map(|&i| ds.class[i].expect("training row"))
            .collect();
        Ok(Batch {
            views: vec![ds.features.select_rows(&rows)],
            labels: Some(labels),
        })
    }
}

/// Trains encoder and head on the class labels, adding the adversarial term when `use_admin`.
pub fn train_classifier(
    ds: &LabeledDataset,
    use_admin: bool,
    cfg: &ClassifyConfig,
) -> Result<ClassifierRun> {
    let game = cfg.game_config(use_admin)?;
    let m = ds.features.cols();
    let mut encoder = Mlp::init(
        &[m, cfg.hidden, cfg.d],
        cfg.hidden_activation,
        cfg.output_activation,
        &mut Rng::new(cfg.seed, streams::ENCODER_INIT),
    )?;
    let head = ClassifierHead::init(
        cfg.d,
        ds.num_classes(),
        &mut Rng::new(cfg.seed, streams::HEAD_INIT),
    );
    let mut hook = CrossEntropyHook::new(head, game.encoder_opt);
    let mut bank = PredictorBank::new(
        cfg.d,
        game.predictor.clone(),
        &mut Rng::new(cfg.seed, streams::BANK_INIT),
    )?;
    let log = admin_train(&mut encoder, &mut bank, &train_source(ds), &mut hook, &game)?;
    Ok(ClassifierRun {
        encoder,
        head: hook.head,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub shape_accuracy: f64,
    pub color_accuracy: f64,
    /// Held-out (red, triangle) rows whose kNN class vote is (red, square).
    pub heldout_as_red_square: f64,
}

/// Shape and color kNN accuracy with fresh reference and query rows of every `(shape, color)` pair.
pub fn attribute_knn(
    encoder: &Mlp,
    emb: &ShapesEmbedding,
    per_combo: usize,
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed, streams::EVAL);
    let combos = all_combos();
    let reference = emb.sample(&combos, per_combo, &mut rng)?;
    let query = emb.sample(&combos, per_combo, &mut rng)?;
    let zr = encoder.forward(&reference.features)?;
    let zq = encoder.forward(&query.features)?;
    if !zr.is_finite() || !zq.is_finite() {
        return Err(Error::NonFinite(
            "representation of the evaluation set".into(),
        ));
    }
    Ok((
        knn_eval(&zr, &reference.shape, &zq, &query.shape, k)?,
        knn_eval(&zr, &reference.color, &zq, &query.color, k)?,
    ))
}

/// Attribute kNN on fresh rows of every `(shape, color)` pair, plus the
/// class vote of the held-out rows against the labelled training split.
pub fn eval_generalization(
    encoder: &Mlp,
    emb: &ShapesEmbedding,
    ds: &LabeledDataset,
    per_combo: usize,
    k: usize,
    seed: u64,
) -> Result<Generalization> {
    let (shape_accuracy, color_accuracy) = attribute_knn(encoder, emb, per_combo, k, seed)?;

    let train = ds.indices(Split::Train);
    let held = ds.indices(Split::Heldout);
    let zt = encoder.forward(&ds.features.select_rows(&train))?;
    let zh = encoder.forward(&ds.features.select_rows(&held))?;
    let labels: Vec<usize> = train
        .iter()
        .map(|&i| ds.class[i].expect("training row"))
        .collect();
    let votes = knn_predict(&zt, &labels, &zh, k)?;
    let red_square = votes.iter().filter(|&&c| c == 0).count() as f64 / votes.len().max(1) as f64;
    Ok(Generalization {
        shape_accuracy,
        color_accuracy,
        heldout_as_red_square: red_square,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub use_admin: bool,
    pub train_accuracy: f64,
    pub generalization: Generalization,
    /// On the training split.
    pub mean_sq_dcorr: f64,
    /// Mean L2 norm of the training-split representation.
    pub mean_norm: f64,
    pub diverged: bool,
}

/// Rows of the training split used for the dependence estimate (distance correlation is quadratic).
const DCORR_ROWS: usize = 1024;

fn evaluate(
    run: &ClassifierRun,
    use_admin: bool,
    emb: &ShapesEmbedding,
    ds: &LabeledDataset,
    cfg: &ClassifyConfig,
) -> Result<ClassifyReport> {
    if run.log.diverged() {
        let nan = f64::NAN;
        return Ok(ClassifyReport {
            use_admin,
            train_accuracy: nan,
            generalization: Generalization {
                shape_accuracy: nan,
                color_accuracy: nan,
                heldout_as_red_square: nan,
            },
            mean_sq_dcorr: nan,
            mean_norm: nan,
            diverged: true,
        });
    }
    let train = ds.indices(Split::Train);
    let z = run.encoder.forward(&ds.features.select_rows(&train))?;
    let pred = run.head.predict(&z)?;
    let hits = train
        .iter()
        .zip(&pred)
        .filter(|(&i, &p)| ds.class[i] == Some(p))
        .count();
    // the split is grouped by class, so take an evenly strided subset
    let stride = (train.len() / DCORR_ROWS).max(1);
    let sub: Vec<usize> = (0..train.len()).step_by(stride).take(DCORR_ROWS).collect();
    Ok(ClassifyReport {
        use_admin,
        train_accuracy: hits as f64 / train.len() as f64,
        generalization: eval_generalization(
            &run.encoder,
            emb,
            ds,
            cfg.eval_per_combo,
            cfg.knn_k,
            cfg.seed,
        )?,
        mean_sq_dcorr: mean_sq_dcorr(&z.select_rows(&sub))?,
        mean_norm: z.mean_row_norm(),
        diverged: false,
    })
}

/// Generates the dataset, trains one classifier and evaluates it.
pub fn run_classify(use_admin: bool, cfg: &ClassifyConfig) -> Result<(ClassifyReport, RunLog)> {
    let (ds, emb) = gen_shapes_dataset(&cfg.shapes)?;
    let run = train_classifier(&ds, use_admin, cfg)?;
    let report = evaluate(&run, use_admin, &emb, &ds, cfg)?;
    Ok((report, run.log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// Shape kNN accuracy, the attribute the labels never required.
    pub secondary_accuracy: f64,
    pub color_accuracy: f64,
    pub train_accuracy: f64,
    pub mean_sq_dcorr: f64,
}

/// One margin-formulation run per α; α = 0 is the plain cross-entropy run.
///
/// Runs are spread over up to `threads` scoped worker threads; each run is
/// single-threaded and depends only on `(cfg, α)`.
pub fn sweep_margin(alphas: &[f64], cfg: &ClassifyConfig, threads: usize) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || alphas[0] != 0.0 || alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            "alphas must be strictly increasing and start at 0",
        ));
    }
    let (ds, emb) = gen_shapes_dataset(&cfg.shapes)?;
    let one = |&alpha: &f64| -> Result<SweepRow> {
        let cfg = ClassifyConfig {
            formulation: Formulation::Margin,
            // the baseline never reads the margin, but validation still wants one > 0
            margin: if alpha > 0.0 { alpha } else { cfg.margin },
            ..cfg.clone()
        };
        let admin = alpha > 0.0;
        let run = train_classifier(&ds, admin, &cfg)?;
        let r = evaluate(&run, admin, &emb, &ds, &cfg)?;
        Ok(SweepRow {
            alpha,
            secondary_accuracy: r.generalization.shape_accuracy,
            color_accuracy: r.generalization.color_accuracy,
            train_accuracy: r.train_accuracy,
            mean_sq_dcorr: r.mean_sq_dcorr,
        })
    };
    parallel_map(alphas, threads, one)
}

fn parallel_map<T: Sync + Copy, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(
                h.join()
                    .map_err(|_| Error::Numeric("worker thread panicked".into()))??,
            );
        }
        Ok(out)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `standardized`, `margin` or `neither`.
    pub name: String,
    pub k: usize,
    pub secondary_accuracy: f64,
    pub color_accuracy: f64,
    pub train_accuracy: f64,
    pub mean_sq_dcorr: f64,
    pub mean_norm: f64,
    pub diverged: bool,
}

/// Standardized squared-l2 (k = 2), l1 margin (k = 1) and raw unbounded l1 maximization.
pub fn ablation_configs(cfg: &ClassifyConfig) -> Vec<(&'static str, ClassifyConfig)> {
    vec![
        (
            "standardized",
            ClassifyConfig {
                formulation: Formulation::Standardized,
                distance: Distance::L2Squared,
                k: 2,
                ..cfg.clone()
            },
        ),
        (
            "margin",
            ClassifyConfig {
                formulation: Formulation::Margin,
                distance: Distance::L1,
                k: 1,
                ..cfg.clone()
            },
        ),
        (
            "neither",
            ClassifyConfig {
                formulation: Formulation::Unbounded,
                distance: Distance::L1,
                k: 1,
                ..cfg.clone()
            },
        ),
    ]
}

pub fn ablate_formulations(cfg: &ClassifyConfig, threads: usize) -> Result<Vec<AblationRow>> {
    let (ds, emb) = gen_shapes_dataset(&cfg.shapes)?;
    let configs = ablation_configs(cfg);
    let idx: Vec<usize> = (0..configs.len()).collect();
    parallel_map(&idx, threads, |&i| {
        let (name, c) = &configs[i];
        let run = train_classifier(&ds, true, c)?;
        let r = evaluate(&run, true, &emb, &ds, c)?;
        Ok(AblationRow {
            name: name.to_string(),
            k: c.k,
            secondary_accuracy: r.generalization.shape_accuracy,
            color_accuracy: r.generalization.color_accuracy,
            train_accuracy: r.train_accuracy,
            mean_sq_dcorr: r.mean_sq_dcorr,
            mean_norm: r.mean_norm,
            diverged: r.diverged,
        })
    })
}
