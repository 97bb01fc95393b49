use serde::{Deserialize, Serialize};

use super::bank::PredictorSpec;
use super::loss::Distance;
use super::standardize::DEFAULT_EPS;
use crate::diff::OptimizerConfig;
use crate::error::{Error, Result};

/// Which adversarial objective the encoder optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `1 − MSE` on batch-standardized representations (always squared l2).
    Standardized,
    /// Per-sample hinge `max(0, α − dist)` on raw representations.
    Margin,
    /// Raw `1 − dist` maximization with no standardization or margin; an ablation.
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdminConfig {
    pub formulation: Formulation,
    /// Distance for the margin and unbounded formulations.
    pub distance: Distance,
    pub margin: f64,
    /// Weight of the adversarial term in the encoder objective.
    pub lambda: f64,
    /// Predictor updates per encoder update.
    pub k: usize,
    /// Encoder updates.
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eps: f64,
    pub predictor: PredictorSpec,
    pub encoder_opt: OptimizerConfig,
    pub predictor_opt: OptimizerConfig,
    /// Encoder steps between distance-correlation probes; 0 disables all but the first and last.
    pub dcorr_every: usize,
    pub monitor_size: usize,
}

impl Default for AdminConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Standardized,
            distance: Distance::L2Squared,
            margin: 0.0,
            lambda: 1.0,
            k: 1,
            steps: 1000,
            batch_size: 256,
            seed: 0,
            eps: DEFAULT_EPS,
            predictor: PredictorSpec::default(),
            encoder_opt: OptimizerConfig::adam(1e-3),
            predictor_opt: OptimizerConfig::adam(1e-3),
            dcorr_every: 0,
            monitor_size: 512,
        }
    }
}

impl AdminConfig {
    /// Distance used by both players: the standardized game is always squared l2.
    pub fn effective_distance(&self) -> Distance {
        match self.formulation {
            Formulation::Standardized => Distance::L2Squared,
            _ => self.distance,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::config(format!(
                "the game needs an embedding of at least 2 dimensions, got {dim}"
            )));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.monitor_size < 4 {
            return Err(Error::config("monitor_size must be at least 4"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config(format!(
                "margin must be finite and >= 0, got {}",
                self.margin
            )));
        }
        if self.formulation == Formulation::Margin && self.margin == 0.0 {
            return Err(Error::config("the margin formulation needs margin > 0"));
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return Err(Error::config("eps must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_needs_positive_alpha() {
        let cfg = AdminConfig {
            formulation: Formulation::Margin,
            ..AdminConfig::default()
        };
        assert!(cfg.validate(4).is_err());
        let cfg = AdminConfig { margin: 0.4, ..cfg };
        assert!(cfg.validate(4).is_ok());
    }

    #[test]
    fn standardized_ignores_alpha_and_distance() {
        let cfg = AdminConfig {
            margin: 0.0,
            distance: Distance::L1,
            ..AdminConfig::default()
        };
        assert!(cfg.validate(2).is_ok());
        assert_eq!(cfg.effective_distance(), Distance::L2Squared);
    }

    #[test]
    fn rejects_bad_shapes_and_counts() {
        let cfg = AdminConfig::default();
        assert!(cfg.validate(1).is_err());
        assert!(AdminConfig {
            k: 0,
            ..cfg.clone()
        }
        .validate(4)
        .is_err());
        assert!(AdminConfig {
            lambda: -1.0,
            ..cfg
        }
        .validate(4)
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = AdminConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: AdminConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
