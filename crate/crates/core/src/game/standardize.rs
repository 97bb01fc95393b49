use crate::diff::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Batch standardization `(z − μ) / √(v + ε)` with biased batch variance `v`.
///
/// The forward pass caches the batch statistics; [`Standardizer::backward`]
/// differentiates through them as well as through the affine map.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub eps: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
    output: Option<Matrix>,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self::new(DEFAULT_EPS)
    }
}

impl Standardizer {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            mean: Vec::new(),
            std: Vec::new(),
            output: None,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `√(v + ε)` per column from the last forward.
    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn forward(&mut self, z: &Matrix) -> Result<Matrix> {
        let n = z.rows();
        if n < 2 {
            return Err(Error::Degenerate(format!(
                "standardization needs at least two samples, got {n}"
            )));
        }
        let mean = z.column_means();
        let mut var = vec![0.0; z.cols()];
        for r in z.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| (v / n as f64 + self.eps).sqrt())
            .collect();
        let mut out = z.clone();
        for i in 0..n {
            for ((x, m), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
        self.mean = mean;
        self.std = std;
        self.output = Some(out.clone());
        Ok(out)
    }

    /// Gradient w.r.t. the input of the last forward, given the gradient w.r.t. its output.
    pub fn backward(&self, upstream: &Matrix) -> Result<Matrix> {
        let y = self
            .output
            .as_ref()
            .ok_or_else(|| Error::config("standardize backward called before forward"))?;
        y.check_same(upstream, "standardize backward")?;
        let n = y.rows() as f64;
        let d = y.cols();
        let mut mean_g = vec![0.0; d];
        let mut mean_gy = vec![0.0; d];
        for (gr, yr) in upstream.row_iter().zip(y.row_iter()) {
            for j in 0..d {
                mean_g[j] += gr[j];
                mean_gy[j] += gr[j] * yr[j];
            }
        }
        mean_g.iter_mut().for_each(|v| *v /= n);
        mean_gy.iter_mut().for_each(|v| *v /= n);
        let mut out = upstream.clone();
        for i in 0..y.rows() {
            let yr = y.row(i);
            let o = out.row_mut(i);
            for j in 0..d {
                o[j] = (o[j] - mean_g[j] - yr[j] * mean_gy[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Stateless convenience wrapper.
pub fn standardize(z: &Matrix, eps: f64) -> Result<Matrix> {
    Standardizer::new(eps).forward(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, FD_STEP};
    use crate::synth::Rng;

    #[test]
    fn two_point_column() {
        let z = Matrix::column_vector(&[1.0, 3.0]);
        let s = standardize(&z, 0.0).unwrap();
        assert_eq!(s.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let z = Matrix::column_vector(&[5.0, 5.0, 5.0]);
        let s = standardize(&z, DEFAULT_EPS).unwrap();
        assert!(s.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn idempotent_up_to_eps() {
        let mut rng = Rng::new(1, 0);
        let z =
            Matrix::from_vec(64, 3, (0..192).map(|_| rng.normal() * 4.0 + 1.0).collect()).unwrap();
        let once = standardize(&z, DEFAULT_EPS).unwrap();
        let twice = standardize(&once, DEFAULT_EPS).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-4);
    }

    #[test]
    fn output_moments() {
        let mut rng = Rng::new(2, 0);
        let z =
            Matrix::from_vec(100, 4, (0..400).map(|_| rng.uniform(-3.0, 7.0)).collect()).unwrap();
        let s = standardize(&z, 1e-12).unwrap();
        for j in 0..4 {
            let c = s.column(j);
            let m = c.iter().sum::<f64>() / 100.0;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(3, 0);
        let n = 16;
        let z = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let w = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        // objective Σ w ∘ y²  (nonlinear in the output so every path matters)
        let objective = |data: &[f64]| {
            let zz = Matrix::from_vec(n, 2, data.to_vec())?;
            let y = standardize(&zz, DEFAULT_EPS)?;
            Ok(y.data().iter().zip(w.data()).map(|(a, b)| b * a * a).sum())
        };
        let mut st = Standardizer::default();
        let y = st.forward(&z).unwrap();
        let up = y.zip_with(&w, |a, b| 2.0 * a * b).unwrap();
        let g = st.backward(&up).unwrap();
        let err = grad_check(objective, g.data(), z.data(), FD_STEP).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mean_and_scale_paths_cancel() {
        let mut rng = Rng::new(4, 0);
        let z = Matrix::from_vec(32, 3, (0..96).map(|_| rng.normal()).collect()).unwrap();
        let mut st = Standardizer::default();
        let y = st.forward(&z).unwrap();
        let g = st.backward(&Matrix::filled(32, 3, 0.7)).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-12));
        let g = st.backward(&y).unwrap();
        assert!(
            g.data().iter().all(|v| v.abs() < 1e-4),
            "{:?}",
            g.data().iter().fold(0.0f64, |a, b| a.max(b.abs()))
        );
    }
}
