//! `admin-lab`: one subcommand per experiment.
//!
//! Every run writes `<stem>.json` (effective config plus results, byte-stable
//! for a fixed command line), `<stem>.meta.json` (timing) and any CSV tables
//! under `--out`. Exit codes: 0 success, 2 usage or config error, 3 numeric
//! failure, 1 I/O trouble.

mod input;
mod overrides;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use admin_lab::apps::{
    ablate_formulations, run_classify, run_converge, run_nlpica, run_pica, run_ssl_pair,
    sweep_margin, write_scatter_csv, ClassifyConfig, ConvergeConfig, PicaConfig, PicaMethod,
    SslConfig,
};
use admin_lab::diff::Matrix;
use admin_lab::game::RunLog;
use admin_lab::metrics::{corr_summary, pairwise_dcorr, pearson_matrix};
use admin_lab::synth::{gen_pairwise_not_mutual, gen_quadratic_pair, gen_uniform};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use overrides::{OverrideError, Pair};

/// Version of the result-file layout.
const RESULT_SCHEMA_VERSION: u32 = 1;
const THREADS_ENV: &str = "ADMIN_LAB_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "admin-lab",
    version,
    about = "Adversarial dependence minimization experiments"
)]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` (and `shapes.seed` where present).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the result JSON on stdout instead of the one-line summary.
    #[arg(long, global = true)]
    json: bool,
    /// Plain `key=value` file applied before command-line overrides.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    steps: Option<usize>,
    /// Representation width.
    #[arg(long)]
    d: Option<usize>,
    /// Config overrides, dotted keys allowed (`shapes.noise_sigma=0.2`).
    #[arg(value_name = "KEY=VALUE", value_parser = overrides::parse_pair)]
    set: Vec<Pair>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pearson and distance-correlation summary of a CSV or a generated sample.
    Dcorr(DcorrArgs),
    /// Linear and nonlinear component analysis on the three-dimensional toy.
    Pica {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        set: Overrides,
    },
    /// Standardized game on correlated Gaussians with no task term.
    Converge(Overrides),
    /// Cross-entropy baseline and the regularized classifier on the shapes toy.
    Classify(Overrides),
    /// Label-free two-view training and its λ = 0 control.
    Ssl(Overrides),
    /// Margin sweep for the classifier.
    SweepMargin {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.1,0.2,0.4,0.8,1.6",
            allow_negative_numbers = true
        )]
        alphas: Vec<f64>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Standardized vs margin vs unbounded formulations.
    Ablate(Overrides),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "gen"])))]
struct DcorrArgs {
    /// Numeric CSV, one sample per row; a non-numeric first row is a header.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    gen: Option<Generator>,
    /// Rows to generate.
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(value_name = "KEY=VALUE", value_parser = overrides::parse_pair)]
    set: Vec<Pair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Generator {
    /// `x ~ U(-1, 1)` and `x²`.
    Quadratic,
    /// `x₁, x₂ ~ U(0, 1)` and `frac(x₁ + x₂)`.
    PairwiseNotMutual,
    /// Two independent `U(0, 1)` columns.
    Uniform,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    PcaSvd,
    PcaCovreg,
    PcaLinearPred,
    PicaNonlinear,
    Nlpica,
}

impl From<Method> for PicaMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::PcaSvd => PicaMethod::PcaSvd,
            Method::PcaCovreg => PicaMethod::PcaCovreg,
            Method::PcaLinearPred => PicaMethod::PcaLinearPred,
            Method::PicaNonlinear => PicaMethod::PicaNonlinear,
            Method::Nlpica => PicaMethod::Nlpica,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DcorrConfig {
    /// Input path, or `gen:<name>`.
    source: String,
    n: usize,
    seed: u64,
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Io(_) => 1,
            Fail::Usage(_) => 2,
            Fail::Numeric(_) => 3,
        }
    }
}

impl From<admin_lab::Error> for Fail {
    fn from(e: admin_lab::Error) -> Self {
        if e.is_numeric() {
            Fail::Numeric(e.to_string())
        } else if matches!(e, admin_lab::Error::Io(_)) {
            Fail::Io(e.to_string())
        } else {
            Fail::Usage(e.to_string())
        }
    }
}

impl From<OverrideError> for Fail {
    fn from(e: OverrideError) -> Self {
        Fail::Usage(e.0)
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail::Io(e.to_string())
    }
}

impl From<csv::Error> for Fail {
    fn from(e: csv::Error) -> Self {
        Fail::Io(e.to_string())
    }
}

/// What a command hands back for writing.
struct Outcome {
    stem: String,
    config: Value,
    result: Value,
    summary: String,
    diverged: bool,
}

struct Ctx<'a> {
    cli: &'a Cli,
    file_pairs: Vec<Pair>,
}

impl Ctx<'_> {
    /// Defaults, then the config file, then positional pairs, then named flags.
    fn layered<T>(&self, base: T, set: &Overrides) -> Result<T, Fail>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        let mut pairs = self.file_pairs.clone();
        pairs.extend(set.set.iter().cloned());
        if let Some(s) = set.steps {
            pairs.push(("steps".into(), s.to_string()));
        }
        if let Some(d) = set.d {
            pairs.push(("d".into(), d.to_string()));
        }
        if let Some(seed) = self.cli.seed {
            for key in ["seed", "shapes.seed"] {
                if overrides::has_key(&base, key) {
                    pairs.push((key.into(), seed.to_string()));
                }
            }
        }
        Ok(overrides::apply(&base, &pairs)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Fail> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Fail::Io(format!("{}: {e}", p.display())))
    }

    fn write_runlog(&self, name: &str, log: &RunLog) -> Result<(), Fail> {
        let mut w = self.create(name)?;
        log.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_rows<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), Fail> {
        let mut w = csv::Writer::from_writer(self.create(name)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn divergence_of(log: &RunLog) -> Value {
    to_value(&log.divergence)
}

fn threads() -> Result<usize, Fail> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Fail::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{s}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_dcorr(ctx: &Ctx, a: &DcorrArgs) -> Result<Outcome, Fail> {
    let source = match (&a.input, a.gen) {
        (Some(p), _) => p.display().to_string(),
        (None, Some(g)) => format!("gen:{}", g.to_possible_value().unwrap().get_name()),
        (None, None) => unreachable!("clap requires a source"),
    };
    let base = DcorrConfig {
        source,
        n: a.n,
        seed: 0,
    };
    let cfg = ctx.layered(
        base,
        &Overrides {
            set: a.set.clone(),
            ..Overrides::default()
        },
    )?;
    let x = match (&a.input, a.gen) {
        (Some(p), _) => {
            let f = File::open(p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?;
            input::read_matrix(f).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?
        }
        (None, Some(Generator::Quadratic)) => gen_quadratic_pair(cfg.n, 1.0, cfg.seed)?,
        (None, Some(Generator::PairwiseNotMutual)) => gen_pairwise_not_mutual(cfg.n, cfg.seed)?,
        (None, Some(Generator::Uniform)) => gen_uniform(cfg.n, 2, 0.0, 1.0, cfg.seed)?,
        (None, None) => unreachable!(),
    };
    let (n, d) = x.shape();
    let summary = corr_summary(&x)?;
    let pairwise = rows_of(&pairwise_dcorr(&x)?);
    let pearson = rows_of(&pearson_matrix(&x));
    let max_pairwise = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| pairwise[i][j])
        .fold(0.0, f64::max);
    // the last column against all the others
    let joint = summary.per_dim_dcorr[d - 1];
    let line = format!(
        "n={n} d={d} mean|pearson|={:.4} max pairwise dcorr={max_pairwise:.4} joint dcorr={joint:.4}",
        summary.mean_abs_offdiag_pearson
    );
    Ok(Outcome {
        stem: "dcorr".into(),
        config: to_value(&cfg),
        result: json!({
            "n": n,
            "d": d,
            "dcorr": if d == 2 { json!(pairwise[0][1]) } else { Value::Null },
            "max_pairwise_dcorr": max_pairwise,
            "joint_dcorr": joint,
            "pearson": pearson,
            "pairwise_dcorr": pairwise,
            "summary": summary,
        }),
        summary: line,
        diverged: false,
    })
}

fn cmd_pica(ctx: &Ctx, method: Method, set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(PicaConfig::default(), set)?;
    let method = PicaMethod::from(method);
    let run = match method {
        PicaMethod::Nlpica => run_nlpica(&cfg)?,
        m => run_pica(m, &cfg)?,
    };
    let stem = format!("pica_{}", method.as_str());
    let mut w = ctx.create(&format!("{stem}_scatter.csv"))?;
    write_scatter_csv(&run.scatter, &mut w)?;
    w.flush()?;
    if let Some(log) = &run.log {
        ctx.write_runlog(&format!("{stem}_runlog.csv"), log)?;
    }
    let r = &run.report;
    Ok(Outcome {
        summary: format!(
            "{}: explained variance {:.3}, recon mse {:.4}, dcorr(z1,z2) {:.4}",
            method.as_str(),
            r.explained_variance,
            r.recon_mse,
            r.dcorr_z
        ),
        stem,
        config: to_value(&cfg),
        result: json!({
            "report": r,
            "divergence": run.log.as_ref().map_or(Value::Null, divergence_of),
        }),
        diverged: run.diverged(),
    })
}

fn cmd_converge(ctx: &Ctx, set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(ConvergeConfig::default(), set)?;
    let (report, log) = run_converge(&cfg)?;
    ctx.write_runlog("converge_runlog.csv", &log)?;
    Ok(Outcome {
        stem: "converge".into(),
        summary: format!(
            "final predictor loss {:.4}, mean|pearson| {:.4}, mean sq dcorr {:.4} -> {:.4}",
            report.final_predictor_loss,
            report.final_mean_abs_pearson,
            report.initial_mean_sq_dcorr,
            report.final_mean_sq_dcorr
        ),
        config: to_value(&cfg),
        result: json!({ "report": report, "divergence": divergence_of(&log) }),
        diverged: log.diverged(),
    })
}

fn cmd_classify(ctx: &Ctx, set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(ClassifyConfig::default(), set)?;
    let (base, base_log) = run_classify(false, &cfg)?;
    ctx.write_runlog("classify_baseline_runlog.csv", &base_log)?;
    let (admin, admin_log) = run_classify(true, &cfg)?;
    ctx.write_runlog("classify_admin_runlog.csv", &admin_log)?;
    Ok(Outcome {
        stem: "classify".into(),
        summary: format!(
            "shape kNN {:.4} -> {:.4}, color kNN {:.4} -> {:.4}, mean sq dcorr {:.4} -> {:.4}",
            base.generalization.shape_accuracy,
            admin.generalization.shape_accuracy,
            base.generalization.color_accuracy,
            admin.generalization.color_accuracy,
            base.mean_sq_dcorr,
            admin.mean_sq_dcorr
        ),
        config: to_value(&cfg),
        result: json!({
            "baseline": base,
            "admin": admin,
            "baseline_divergence": divergence_of(&base_log),
            "admin_divergence": divergence_of(&admin_log),
        }),
        diverged: base.diverged || admin.diverged,
    })
}

fn cmd_ssl(ctx: &Ctx, set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(SslConfig::default(), set)?;
    let (run, control) = run_ssl_pair(&cfg)?;
    ctx.write_runlog("ssl_runlog.csv", &run.log)?;
    ctx.write_runlog("ssl_control_runlog.csv", &control.log)?;
    let (r, c) = (&run.report, &control.report);
    Ok(Outcome {
        stem: "ssl".into(),
        summary: format!(
            "shape kNN {:.4}, color kNN {:.4}, mean sq dcorr {:.4} (control {:.4})",
            r.shape_accuracy, r.color_accuracy, r.mean_sq_dcorr, c.mean_sq_dcorr
        ),
        config: to_value(&cfg),
        result: json!({
            "admin": r,
            "control": c,
            "admin_divergence": divergence_of(&run.log),
            "control_divergence": divergence_of(&control.log),
        }),
        diverged: r.diverged || c.diverged,
    })
}

fn cmd_sweep(ctx: &Ctx, alphas: &[f64], set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(ClassifyConfig::default(), set)?;
    let rows = sweep_margin(alphas, &cfg, threads()?)?;
    ctx.write_rows("sweep_margin.csv", &rows)?;
    let line = rows
        .iter()
        .map(|r| format!("{}:{:.4}", r.alpha, r.secondary_accuracy))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Outcome {
        stem: "sweep_margin".into(),
        summary: format!("shape kNN by margin {line}"),
        config: json!({ "alphas": alphas, "classify": cfg }),
        diverged: rows
            .iter()
            .any(|r| !(r.secondary_accuracy.is_finite() && r.mean_sq_dcorr.is_finite())),
        result: json!({ "rows": rows }),
    })
}

fn cmd_ablate(ctx: &Ctx, set: &Overrides) -> Result<Outcome, Fail> {
    let cfg = ctx.layered(ClassifyConfig::default(), set)?;
    let rows = ablate_formulations(&cfg, threads()?)?;
    ctx.write_rows("ablate.csv", &rows)?;
    let line = rows
        .iter()
        .map(|r| {
            format!(
                "{}: shape {:.4} dcorr {:.4} norm {:.2}",
                r.name, r.secondary_accuracy, r.mean_sq_dcorr, r.mean_norm
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome {
        stem: "ablate".into(),
        summary: line,
        config: to_value(&cfg),
        diverged: rows.iter().any(|r| r.diverged),
        result: json!({ "rows": rows }),
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Dcorr(_) => "dcorr",
        Command::Pica { .. } => "pica",
        Command::Converge(_) => "converge",
        Command::Classify(_) => "classify",
        Command::Ssl(_) => "ssl",
        Command::SweepMargin { .. } => "sweep-margin",
        Command::Ablate(_) => "ablate",
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), Fail> {
    let mut text = serde_json::to_string_pretty(v).expect("values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Fail::Io(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<bool, Fail> {
    let file_pairs = match &cli.config {
        Some(p) => overrides::read_config_file(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&cli.out).map_err(|e| Fail::Io(format!("{}: {e}", cli.out.display())))?;
    let ctx = Ctx { cli, file_pairs };
    let started = Instant::now();
    let out = match &cli.command {
        Command::Dcorr(a) => cmd_dcorr(&ctx, a),
        Command::Pica { method, set } => cmd_pica(&ctx, *method, set),
        Command::Converge(set) => cmd_converge(&ctx, set),
        Command::Classify(set) => cmd_classify(&ctx, set),
        Command::Ssl(set) => cmd_ssl(&ctx, set),
        Command::SweepMargin { alphas, set } => cmd_sweep(&ctx, alphas, set),
        Command::Ablate(set) => cmd_ablate(&ctx, set),
    }?;
    let name = command_name(&cli.command);
    let doc = json!({
        "schema_version": RESULT_SCHEMA_VERSION,
        "command": name,
        "config": out.config,
        "diverged": out.diverged,
        "result": out.result,
    });
    write_json(&ctx.path(&format!("{}.json", out.stem)), &doc)?;
    write_json(
        &ctx.path(&format!("{}.meta.json", out.stem)),
        &json!({
            "command": name,
            "version": env!("CARGO_PKG_VERSION"),
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        }),
    )?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("values serialize")
        );
    } else {
        println!("{}", out.summary);
    }
    Ok(out.diverged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("admin-lab: training diverged; partial results written");
            ExitCode::from(3)
        }
        Err(f) => {
            let msg = match &f {
                Fail::Usage(m) | Fail::Numeric(m) | Fail::Io(m) => m,
            };
            eprintln!("admin-lab: {msg}");
            ExitCode::from(f.code())
        }
    }
}
