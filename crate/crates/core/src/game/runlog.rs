use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::AdminConfig;
use crate::error::{Error, Result};
use crate::metrics::CorrSummary;

pub const RUNLOG_SCHEMA_VERSION: u32 = 1;

pub const RUNLOG_CSV_HEADER: &str =
    "step,predictor_loss,encoder_adv_loss,task_loss,mean_abs_pearson,mean_norm,mean_sq_dcorr";

/// One encoder update. Losses are measured before the update they drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean over the `k` predictor updates that preceded this encoder update.
    pub predictor_loss: f64,
    /// Unweighted adversarial loss, averaged over views.
    pub encoder_adv_loss: f64,
    pub task_loss: f64,
    pub mean_abs_pearson: f64,
    /// Mean L2 norm of the raw (unstandardized) representation.
    pub mean_norm: f64,
}

/// Dependence probe on the fixed monitor batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub mean_sq_dcorr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub schema_version: u32,
    pub config: AdminConfig,
    pub steps: Vec<StepRecord>,
    pub probes: Vec<ProbeRecord>,
    /// Dependence summary of the final representation of the monitor batch.
    pub summary: Option<CorrSummary>,
    /// Set when the run stopped early on a non-finite value.
    pub divergence: Option<Divergence>,
}

impl RunLog {
    pub fn new(config: AdminConfig) -> Self {
        Self {
            schema_version: RUNLOG_SCHEMA_VERSION,
            config,
            steps: Vec::new(),
            probes: Vec::new(),
            summary: None,
            divergence: None,
        }
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    /// Mean of `f` over the last `window` step records.
    pub fn tail_mean(&self, window: usize, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        let w = window.min(self.steps.len());
        if w == 0 {
            return None;
        }
        let tail = &self.steps[self.steps.len() - w..];
        Some(tail.iter().map(f).sum::<f64>() / w as f64)
    }

    pub fn first_probe(&self) -> Option<&ProbeRecord> {
        self.probes.first()
    }

    pub fn last_probe(&self) -> Option<&ProbeRecord> {
        self.probes.last()
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Turns a recorded divergence into an error.
    pub fn into_result(self) -> Result<Self> {
        match &self.divergence {
            Some(d) => Err(Error::Diverged {
                step: d.step,
                what: d.what.clone(),
            }),
            None => Ok(self),
        }
    }

    /// Steps strictly increasing and every logged number finite.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.steps.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Numeric(format!(
                    "step records out of order: {} then {}",
                    w[0].step, w[1].step
                )));
            }
        }
        for w in self.probes.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Numeric("probe records out of order".into()));
            }
        }
        for r in &self.steps {
            let vals = [
                r.predictor_loss,
                r.encoder_adv_loss,
                r.task_loss,
                r.mean_abs_pearson,
                r.mean_norm,
            ];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("step record {}", r.step)));
            }
        }
        if self.probes.iter().any(|p| !p.mean_sq_dcorr.is_finite()) {
            return Err(Error::NonFinite("probe record".into()));
        }
        Ok(())
    }

    /// One row per step; `mean_sq_dcorr` is filled on probed steps only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{RUNLOG_CSV_HEADER}")?;
        let mut probes = self.probes.iter().peekable();
        for r in &self.steps {
            while probes.peek().is_some_and(|p| p.step < r.step) {
                probes.next();
            }
            let dc = match probes.peek() {
                Some(p) if p.step == r.step => p.mean_sq_dcorr.to_string(),
                _ => String::new(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                r.predictor_loss,
                r.encoder_adv_loss,
                r.task_loss,
                r.mean_abs_pearson,
                r.mean_norm,
                dc
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
