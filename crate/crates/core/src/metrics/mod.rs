//! Dependence measurement: Pearson correlation, sample covariance and the
//! empirical distance correlation of Székely, Rizzo & Bakirov (2007).
//!
//! [`dcorr`] uses the biased V-statistic. Time is O(n²) but memory is O(n):
//! a first pass collects the row means of both distance matrices, a second
//! pass recomputes each distance and accumulates the double-centred products.
//! The supported range is n ≤ 8192.

use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};

/// Sample Pearson correlation. Errors on fewer than two samples or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "pearson on {} vs {} samples",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(
            "pearson needs at least two samples".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Unbiased sample covariance (divides by n − 1).
pub fn covariance_matrix(z: &Matrix) -> Result<Matrix> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::Degenerate(
            "covariance needs at least two samples".into(),
        ));
    }
    let (c, _) = z.centered();
    let mut cov = c.t_matmul(&c)?;
    let denom = (n - 1) as f64;
    let d = cov.rows();
    for i in 0..d {
        for j in 0..=i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]) / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

#[inline]
fn euclid(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn distance_row_means(x: &Matrix) -> (Vec<f64>, f64) {
    let n = x.rows();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let d = euclid(xi, x.row(j));
            sums[i] += d;
            sums[j] += d;
        }
    }
    let nf = n as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let grand = means.iter().sum::<f64>() / nf;
    (means, grand)
}

/// Squared distance covariance terms `(dCov²(x,y), dVar²(x), dVar²(y))`.
pub fn dcov_terms(x: &Matrix, y: &Matrix) -> Result<(f64, f64, f64)> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::dim(format!(
            "dcorr on {} vs {} samples",
            n,
            y.rows()
        )));
    }
    if n < 4 {
        return Err(Error::Degenerate(
            "distance correlation needs at least 4 samples".into(),
        ));
    }
    let (ra, ga) = distance_row_means(x);
    let (rb, gb) = distance_row_means(y);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (xi, yi) = (x.row(i), y.row(i));
        // diagonal term: a_ii = 0
        let a0 = -2.0 * ra[i] + ga;
        let b0 = -2.0 * rb[i] + gb;
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for j in (i + 1)..n {
            let a = euclid(xi, x.row(j)) - ra[i] - ra[j] + ga;
            let b = euclid(yi, y.row(j)) - rb[i] - rb[j] + gb;
            ab += a * b;
            aa += a * a;
            bb += b * b;
        }
        sab += 2.0 * ab + a0 * b0;
        saa += 2.0 * aa + a0 * a0;
        sbb += 2.0 * bb + b0 * b0;
    }
    let n2 = (n * n) as f64;
    Ok((sab / n2, saa / n2, sbb / n2))
}

/// Empirical distance correlation 𝓡(x, y) ∈ [0, 1]; 0 when either sample has zero distance variance.
pub fn dcorr(x: &Matrix, y: &Matrix) -> Result<f64> {
    let (cov, vx, vy) = dcov_terms(x, y)?;
    let denom = (vx * vy).sqrt();
    if denom <= 0.0 || !denom.is_finite() {
        return Ok(0.0);
    }
    Ok((cov.max(0.0) / denom).sqrt().clamp(0.0, 1.0))
}

/// `dcorr` between column `i` and the remaining columns of `z`.
pub fn dcorr_one_vs_rest(z: &Matrix, i: usize) -> Result<f64> {
    dcorr(&z.select_columns(&[i]), &z.without_column(i))
}

/// Symmetric matrix of `dcorr` between single columns.
pub fn pairwise_dcorr(z: &Matrix) -> Result<Matrix> {
    let d = z.cols();
    let cols: Vec<Matrix> = (0..d).map(|j| z.select_columns(&[j])).collect();
    let mut out = Matrix::identity(d);
    for i in 0..d {
        for j in 0..i {
            let v = dcorr(&cols[i], &cols[j])?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Pearson matrix; zero-variance pairs are reported as 0.
pub fn pearson_matrix(z: &Matrix) -> Matrix {
    let d = z.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| z.column(j)).collect();
    let mut out = Matrix::identity(d);
    for i in 0..d {
        for j in 0..i {
            let v = pearson(&cols[i], &cols[j]).unwrap_or(0.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Mean absolute off-diagonal Pearson correlation and whether any column was constant.
pub fn mean_abs_pearson(z: &Matrix) -> (f64, bool) {
    let d = z.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| z.column(j)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    let mut degenerate = false;
    for i in 0..d {
        for j in 0..i {
            match pearson(&cols[i], &cols[j]) {
                Ok(r) => total += r.abs(),
                Err(_) => degenerate = true,
            }
            pairs += 1;
        }
    }
    let mean = if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    };
    (mean, degenerate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrSummary {
    pub mean_abs_offdiag_pearson: f64,
    pub mean_sq_dcorr: f64,
    pub per_dim_dcorr: Vec<f64>,
    /// Set when some column had zero variance.
    pub degenerate: bool,
}

pub fn corr_summary(z: &Matrix) -> Result<CorrSummary> {
    if z.rows() < 4 || z.cols() < 2 {
        return Err(Error::config(format!(
            "summary needs n >= 4 and d >= 2, got {}x{}",
            z.rows(),
            z.cols()
        )));
    }
    let (mean_abs, mut degenerate) = mean_abs_pearson(z);
    let per_dim: Vec<f64> = (0..z.cols())
        .map(|i| dcorr_one_vs_rest(z, i))
        .collect::<Result<_>>()?;
    for j in 0..z.cols() {
        let c = z.column(j);
        if c.iter().all(|v| *v == c[0]) {
            degenerate = true;
        }
    }
    let mean_sq = per_dim.iter().map(|r| r * r).sum::<f64>() / per_dim.len() as f64;
    Ok(CorrSummary {
        mean_abs_offdiag_pearson: mean_abs,
        mean_sq_dcorr: mean_sq,
        per_dim_dcorr: per_dim,
        degenerate,
    })
}

/// Mean squared one-vs-rest distance correlation.
pub fn mean_sq_dcorr(z: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..z.cols() {
        let r = dcorr_one_vs_rest(z, i)?;
        total += r * r;
    }
    Ok(total / z.cols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_pairwise_not_mutual, gen_quadratic_pair, gen_uniform, Rng};

    /// Textbook estimator with full n×n distance matrices.
    fn dcorr_oracle(x: &Matrix, y: &Matrix) -> f64 {
        let n = x.rows();
        let dist = |m: &Matrix| {
            let mut d = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = m
                        .row(i)
                        .iter()
                        .zip(m.row(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                }
            }
            d
        };
        let center = |d: Vec<Vec<f64>>| {
            let rm: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
            let cm: Vec<f64> = (0..n)
                .map(|j| d.iter().map(|r| r[j]).sum::<f64>() / n as f64)
                .collect();
            let g = rm.iter().sum::<f64>() / n as f64;
            let mut a = d;
            for i in 0..n {
                for j in 0..n {
                    a[i][j] += g - rm[i] - cm[j];
                }
            }
            a
        };
        let a = center(dist(x));
        let b = center(dist(y));
        let mean = |p: &dyn Fn(usize, usize) -> f64| {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| p(i, j))
                .sum::<f64>()
                / (n * n) as f64
        };
        let v = mean(&|i, j| a[i][j] * b[i][j]);
        let va = mean(&|i, j| a[i][j] * a[i][j]);
        let vb = mean(&|i, j| b[i][j] * b[i][j]);
        if va * vb <= 0.0 {
            return 0.0;
        }
        (v.max(0.0) / (va * vb).sqrt()).sqrt()
    }

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v)
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        // symmetric grid about zero
        let g: Vec<f64> = (-50..=50).map(|i| i as f64 / 50.0).collect();
        let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
        assert!(pearson(&g, &sq).unwrap().abs() < 1e-12);
        assert!(matches!(
            pearson(&x, &vec![1.0; 20]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn streaming_dcorr_matches_full_matrix_oracle() {
        let mut rng = Rng::new(17, 0);
        for (p, q) in [(1, 1), (2, 1), (3, 2)] {
            let n = 60;
            let x = Matrix::from_vec(n, p, (0..n * p).map(|_| rng.normal()).collect()).unwrap();
            let mut y = Matrix::from_vec(n, q, (0..n * q).map(|_| rng.normal()).collect()).unwrap();
            for i in 0..n {
                y[(i, 0)] += x[(i, 0)].powi(2);
            }
            let fast = dcorr(&x, &y).unwrap();
            let slow = dcorr_oracle(&x, &y);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn affine_pair_has_unit_dcorr() {
        let m = gen_uniform(512, 1, -1.0, 1.0, 4).unwrap();
        let y = m.map(|v| -3.0 * v + 2.0);
        let r = dcorr(&m, &y).unwrap();
        assert!((1.0 - r) < 1e-9 && r <= 1.0, "{r}");
    }

    #[test]
    fn constant_input_gives_zero() {
        let x = col(&[2.0; 10]);
        let y = col(&(0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(dcorr(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_pair_matches_reference_estimator() {
        // 0.4933 is what the V-statistic gives at n = 4096 for x ~ U(-1,1), y = x²
        // (full-matrix numpy oracle and the `dcor` reference package agree).
        let m = gen_quadratic_pair(4096, 1.0, 1).unwrap();
        let r = dcorr(&m.select_columns(&[0]), &m.select_columns(&[1])).unwrap();
        assert!((r - 0.4933).abs() < 0.03, "{r}");
    }

    #[test]
    fn independent_uniform_summary() {
        let z = gen_uniform(4096, 3, -1.0, 1.0, 8).unwrap();
        let s = corr_summary(&z).unwrap();
        assert!(s.mean_abs_offdiag_pearson < 0.05);
        assert!(s.mean_sq_dcorr < 0.01, "{}", s.mean_sq_dcorr);
        assert!(!s.degenerate);
    }

    #[test]
    fn duplicated_column_summary() {
        let x = gen_uniform(64, 1, 0.0, 1.0, 2).unwrap();
        let z = Matrix::from_columns(&[x.column(0), x.column(0)]).unwrap();
        let s = corr_summary(&z).unwrap();
        assert!((s.mean_abs_offdiag_pearson - 1.0).abs() < 1e-12);
        for r in s.per_dim_dcorr {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_independent_but_jointly_dependent() {
        let z = gen_pairwise_not_mutual(4096, 3).unwrap();
        let pw = pairwise_dcorr(&z).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!(pw[(i, j)] < 0.06, "pair ({i},{j}) = {}", pw[(i, j)]);
            }
        }
        let s = corr_summary(&z).unwrap();
        // numpy oracle at n = 4096: dcorr(x3, [x1, x2]) ≈ 0.235
        assert!(s.per_dim_dcorr[2] > 0.15, "{}", s.per_dim_dcorr[2]);
    }

    #[test]
    fn constant_column_sets_flag() {
        let mut z = gen_uniform(32, 3, 0.0, 1.0, 1).unwrap();
        z.set_column(1, &[0.5; 32]);
        let s = corr_summary(&z).unwrap();
        assert!(s.degenerate);
        assert!(s.mean_abs_offdiag_pearson <= 1.0);
    }

    #[test]
    fn covariance_examples() {
        let x: Vec<f64> = vec![1.0, 2.5, -0.5, 4.0, 0.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = covariance_matrix(&Matrix::from_columns(&[x.clone(), neg]).unwrap()).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        let v = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((c[(0, 0)] - v).abs() < 1e-12);
        assert!((c[(0, 1)] + v).abs() < 1e-12);
        assert_eq!(c[(0, 1)], c[(1, 0)]);

        let same = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(covariance_matrix(&same)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn summary_rejects_tiny_inputs() {
        assert!(corr_summary(&Matrix::zeros(3, 2)).is_err());
        assert!(corr_summary(&Matrix::zeros(10, 1)).is_err());
    }
}
