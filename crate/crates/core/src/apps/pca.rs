use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};
use crate::metrics::covariance_matrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the second matrix.
pub fn jacobi_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim(format!(
            "eigen-decomposition of a {}x{} matrix",
            n,
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigen-decomposition input".into()));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += m[(p, q)] * m[(p, q)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) >= OFF_DIAG_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.select_columns(&order);
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    /// Top-`d` eigenvectors of the sample covariance, one per column.
    pub components: Matrix,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Sum of the top-`d` eigenvalues.
    pub explained_variance: f64,
    pub mean: Vec<f64>,
}

impl PcaFit {
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        let mut xc = x.clone();
        for i in 0..xc.rows() {
            for (v, m) in xc.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        xc.matmul(&self.components)
    }
}

/// Principal components of `x` (centered internally).
pub fn pca_svd(x: &Matrix, d: usize) -> Result<PcaFit> {
    let l = x.cols();
    if d == 0 || d > l || l > 8 {
        return Err(Error::config(format!(
            "PCA needs 1 <= d <= l <= 8, got d={d}, l={l}"
        )));
    }
    let cov = covariance_matrix(x)?;
    let (eigenvalues, vectors) = jacobi_eigen(&cov)?;
    let components = vectors.select_columns(&(0..d).collect::<Vec<_>>());
    Ok(PcaFit {
        components,
        explained_variance: eigenvalues[..d].iter().sum(),
        eigenvalues,
        mean: x.column_means(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_pica_observations, Rng};

    #[test]
    fn reconstructs_a_symmetric_matrix() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]]).unwrap();
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let mut lam = Matrix::zeros(3, 3);
        for i in 0..3 {
            lam[(i, i)] = vals[i];
        }
        let back = vecs.matmul(&lam).unwrap().matmul_t(&vecs).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
        let gram = vecs.t_matmul(&vecs).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(3)) < 1e-12);
        assert!((vals.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariance_selects_axes() {
        let mut rng = Rng::new(3, 0);
        let scales = [0.5, 3.0, 1.0, 2.0];
        let n = 2000;
        let mut x = Matrix::zeros(n, 4);
        for i in 0..n {
            for (j, s) in scales.iter().enumerate() {
                x[(i, j)] = s * rng.normal();
            }
        }
        // sample covariance is only nearly diagonal; the variances are far apart
        let fit = pca_svd(&x, 2).unwrap();
        let top: Vec<usize> = (0..2)
            .map(|c| {
                let col = fit.components.column(c);
                (0..4)
                    .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
                    .unwrap()
            })
            .collect();
        assert_eq!(top, vec![1, 3]);
    }

    #[test]
    fn exact_diagonal_matrix_gives_exact_selectors() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 4.0]]).unwrap();
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        assert_eq!(vals, vec![9.0, 4.0, 1.0]);
        assert_eq!(vecs.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(vecs.column(1), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn isotropic_data_orthonormal_components() {
        let mut rng = Rng::new(4, 0);
        let x = Matrix::from_vec(20000, 5, (0..100000).map(|_| rng.normal()).collect()).unwrap();
        let fit = pca_svd(&x, 3).unwrap();
        let gram = fit.components.t_matmul(&fit.components).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(3)) < 1e-10);
        assert!((fit.explained_variance - 3.0).abs() < 0.15);
    }

    #[test]
    fn projected_variance_equals_eigenvalue_sum() {
        let (_, x) = gen_pica_observations(5000, 1).unwrap();
        let fit = pca_svd(&x, 2).unwrap();
        let z = fit.project(&x).unwrap();
        let cov = covariance_matrix(&z).unwrap();
        assert!((cov[(0, 0)] + cov[(1, 1)] - fit.explained_variance).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let x = Matrix::zeros(10, 3);
        assert!(pca_svd(&x, 4).is_err());
        assert!(pca_svd(&x, 0).is_err());
        assert!(pca_svd(&Matrix::zeros(10, 9), 2).is_err());
    }
}
