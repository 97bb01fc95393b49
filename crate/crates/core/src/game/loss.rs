//! Reconstruction and adversarial losses together with their gradients
//! w.r.t. the representation `z` and the prediction `ẑ`.

use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    L2Squared,
    L1,
}

impl Distance {
    /// Per-sample distance, normalized by the number of coordinates.
    pub fn row(self, z: &[f64], zh: &[f64]) -> f64 {
        let d = z.len() as f64;
        let s: f64 = match self {
            Distance::L2Squared => z.iter().zip(zh).map(|(a, b)| (a - b) * (a - b)).sum(),
            Distance::L1 => z.iter().zip(zh).map(|(a, b)| (a - b).abs()).sum(),
        };
        s / d
    }

    /// `∂ row / ∂ z_j` for one coordinate; the derivative w.r.t. `ẑ_j` is its negation.
    fn coord_grad(self, diff: f64, d: f64) -> f64 {
        match self {
            Distance::L2Squared => 2.0 * diff / d,
            // subgradient 0 at a tie
            Distance::L1 => {
                if diff > 0.0 {
                    1.0 / d
                } else if diff < 0.0 {
                    -1.0 / d
                } else {
                    0.0
                }
            }
        }
    }
}

/// Loss value plus gradients w.r.t. both of its matrix arguments.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad_z: Matrix,
    pub grad_zhat: Matrix,
}

/// Mean over samples of the normalized distance: `‖z − ẑ‖²/d` or `Σ|z − ẑ|/d`.
pub fn mean_distance(z: &Matrix, zhat: &Matrix, distance: Distance) -> Result<f64> {
    z.check_same(zhat, "reconstruction")?;
    let total: f64 = z
        .row_iter()
        .zip(zhat.row_iter())
        .map(|(a, b)| distance.row(a, b))
        .sum();
    Ok(total / z.rows() as f64)
}

/// Gradient of [`mean_distance`]; `scale` multiplies both the value and the gradients.
pub fn mean_distance_grad(
    z: &Matrix,
    zhat: &Matrix,
    distance: Distance,
    scale: f64,
) -> Result<LossGrad> {
    let value = scale * mean_distance(z, zhat, distance)?;
    let n = z.rows() as f64;
    let d = z.cols() as f64;
    let grad_z = z.zip_with(zhat, |a, b| scale * distance.coord_grad(a - b, d) / n)?;
    let grad_zhat = grad_z.scale(-1.0);
    Ok(LossGrad {
        value,
        grad_z,
        grad_zhat,
    })
}

/// What the predictors minimize.
pub fn predictor_loss(z: &Matrix, zhat: &Matrix, distance: Distance) -> Result<f64> {
    mean_distance(z, zhat, distance)
}

pub fn predictor_loss_grad(z: &Matrix, zhat: &Matrix, distance: Distance) -> Result<LossGrad> {
    mean_distance_grad(z, zhat, distance, 1.0)
}

/// `1 − E‖z − ẑ‖²/d` on standardized representations; 0 at the equilibrium.
pub fn standardized_adversarial(z_std: &Matrix, zhat: &Matrix) -> Result<LossGrad> {
    let mut g = mean_distance_grad(z_std, zhat, Distance::L2Squared, -1.0)?;
    g.value += 1.0;
    Ok(g)
}

/// `1 − E dist(z, ẑ)` without any normalization; only bounded by the scale of `z`.
pub fn unbounded_adversarial(z: &Matrix, zhat: &Matrix, distance: Distance) -> Result<LossGrad> {
    let mut g = mean_distance_grad(z, zhat, distance, -1.0)?;
    g.value += 1.0;
    Ok(g)
}

/// Mean over samples of `max(0, α − dist(z, ẑ))`.
pub fn margin_adversarial(
    z: &Matrix,
    zhat: &Matrix,
    distance: Distance,
    alpha: f64,
) -> Result<LossGrad> {
    z.check_same(zhat, "margin loss")?;
    let n = z.rows();
    let d = z.cols() as f64;
    let mut value = 0.0;
    let mut grad_z = Matrix::zeros(n, z.cols());
    for i in 0..n {
        let (a, b) = (z.row(i), zhat.row(i));
        let gap = alpha - distance.row(a, b);
        if gap > 0.0 {
            value += gap;
            for (g, (x, y)) in grad_z.row_mut(i).iter_mut().zip(a.iter().zip(b)) {
                *g = -distance.coord_grad(x - y, d) / n as f64;
            }
        }
    }
    let grad_zhat = grad_z.scale(-1.0);
    Ok(LossGrad {
        value: value / n as f64,
        grad_z,
        grad_zhat,
    })
}
