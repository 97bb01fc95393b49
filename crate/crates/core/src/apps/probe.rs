//! Mutual-dependence probe: how well one standardized column can be
//! imputed from the others by a small network.

use serde::{Deserialize, Serialize};

use crate::diff::{Activation, Matrix, Mlp, OptimizerConfig};
use crate::error::{Error, Result};
use crate::game::{standardize, DEFAULT_EPS};
use crate::synth::{streams, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of rows held out for the reported error.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            steps: 4000,
            batch_size: 256,
            lr: 3e-3,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Held-out MSE of a two-layer net predicting standardized column `target`
/// from the other standardized columns. Near 1 means no usable dependence.
pub fn impute_mse(x: &Matrix, target: usize, cfg: &ImputeConfig) -> Result<f64> {
    let (n, p) = x.shape();
    if target >= p || p < 2 {
        return Err(Error::config(format!(
            "cannot impute column {target} of {p}"
        )));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) || cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::config("bad imputation settings"));
    }
    let n_test = ((n as f64) * cfg.test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::config("need rows on both sides of the split"));
    }
    let z = standardize(x, DEFAULT_EPS)?;
    let inputs = z.without_column(target);
    let y = Matrix::column_vector(&z.column(target));
    let train: Vec<usize> = (0..n - n_test).collect();
    let test: Vec<usize> = (n - n_test..n).collect();

    let mut rng = Rng::new(cfg.seed, streams::AUX);
    let mut net = Mlp::init(
        &[p - 1, cfg.hidden, 1],
        Activation::Gelu,
        Activation::Identity,
        &mut rng,
    )?;
    let mut opt = OptimizerConfig::adam(cfg.lr).build(net.param_count());
    for _ in 0..cfg.steps {
        let rows: Vec<usize> = (0..cfg.batch_size)
            .map(|_| train[rng.index(train.len())])
            .collect();
        let (pred, cache) = net.forward_cached(&inputs.select_rows(&rows))?;
        let g = pred
            .sub(&y.select_rows(&rows))?
            .scale(2.0 / rows.len() as f64);
        let grads = net.backward_cached(&cache, &g)?.params;
        let mut params = net.params();
        opt.step(&mut params, &grads, cfg.lr)?;
        net.set_params(&params)?;
    }
    let pred = net.forward(&inputs.select_rows(&test))?;
    let err = pred.sub(&y.select_rows(&test))?;
    Ok(err.data().iter().map(|v| v * v).sum::<f64>() / n_test as f64)
}
