use super::rng::{streams, Rng};
use crate::diff::Matrix;
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn check_n(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::config(format!("need at least 4 samples, got {n}")));
    }
    Ok(())
}

/// `x₁ ~ U(−a, a)`, `x₂ = x₁²`.
pub fn gen_quadratic_pair(n: usize, a: f64, seed: u64) -> Result<Matrix> {
    check_n(n)?;
    if a <= 0.0 {
        return Err(Error::config("half-width must be positive"));
    }
    let mut rng = Rng::new(seed, streams::DATA);
    let mut m = Matrix::zeros(n, 2);
    for i in 0..n {
        let x = rng.uniform(-a, a);
        m[(i, 0)] = x;
        m[(i, 1)] = x * x;
    }
    Ok(m)
}

/// Two independent `U(−√3, √3)` latents and the observation
/// `[5v₁, 3cos(2πv₁/√3), v₂]`. Returns `(latents, observations)`.
pub fn gen_pica_observations(n: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    check_n(n)?;
    let mut rng = Rng::new(seed, streams::DATA);
    Ok(pica_batch(n, &mut rng))
}

pub(crate) fn pica_batch(n: usize, rng: &mut Rng) -> (Matrix, Matrix) {
    let mut latents = Matrix::zeros(n, 2);
    let mut obs = Matrix::zeros(n, 3);
    for i in 0..n {
        let v1 = rng.uniform(-SQRT3, SQRT3);
        let v2 = rng.uniform(-SQRT3, SQRT3);
        latents[(i, 0)] = v1;
        latents[(i, 1)] = v2;
        obs[(i, 0)] = 5.0 * v1;
        obs[(i, 1)] = 3.0 * (2.0 * std::f64::consts::PI * v1 / SQRT3).cos();
        obs[(i, 2)] = v2;
    }
    (latents, obs)
}

/// `x₁, x₂ ~ U(0,1)` and `x₃ = frac(x₁ + x₂)`: pairwise but not mutually independent.
pub fn gen_pairwise_not_mutual(n: usize, seed: u64) -> Result<Matrix> {
    check_n(n)?;
    let mut rng = Rng::new(seed, streams::DATA);
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let a = rng.uniform(0.0, 1.0);
        let b = rng.uniform(0.0, 1.0);
        let s = a + b;
        m[(i, 0)] = a;
        m[(i, 1)] = b;
        m[(i, 2)] = s - s.floor();
    }
    Ok(m)
}

/// Independent `U(lo, hi)` columns.
pub fn gen_uniform(n: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Result<Matrix> {
    check_n(n)?;
    let mut rng = Rng::new(seed, streams::DATA);
    let data = (0..n * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::from_vec(n, cols, data)
}

/// Correlated Gaussian source: `x = M g` with `g ~ N(0, I)` and a fixed
/// seeded mixing `M = I + 0.8·U(−1,1)`, so every coordinate pair co-varies.
#[derive(Clone, Debug)]
pub struct CorrelatedGaussian {
    mixing: Matrix,
}

impl CorrelatedGaussian {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed, streams::EMBEDDING);
        let mut mixing = Matrix::identity(dim);
        for v in mixing.data_mut() {
            *v += 0.8 * rng.uniform(-1.0, 1.0);
        }
        Self { mixing }
    }

    pub fn dim(&self) -> usize {
        self.mixing.rows()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Matrix {
        let d = self.dim();
        let g = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect())
            .expect("sized buffer");
        g.matmul_t(&self.mixing).expect("square mixing")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{covariance_matrix, pearson};

    #[test]
    fn quadratic_pair_range_and_shape() {
        let m = gen_quadratic_pair(1000, 1.0, 3).unwrap();
        assert_eq!(m.shape(), (1000, 2));
        for r in m.row_iter() {
            assert!((-1.0..1.0).contains(&r[0]));
            assert!((0.0..=1.0).contains(&r[1]));
            assert_eq!(r[1], r[0] * r[0]);
        }
        assert!(gen_quadratic_pair(3, 1.0, 0).is_err());
        assert!(gen_quadratic_pair(10, 0.0, 0).is_err());
    }

    #[test]
    fn quadratic_pair_is_uncorrelated() {
        let m = gen_quadratic_pair(4096, 1.0, 1).unwrap();
        let r = pearson(&m.column(0), &m.column(1)).unwrap();
        assert!(r.abs() < 0.05, "pearson {r}");
    }

    #[test]
    fn pica_moments() {
        let (lat, obs) = gen_pica_observations(100_000, 5).unwrap();
        let cov = covariance_matrix(&obs).unwrap();
        for (i, target) in [25.0, 4.5, 1.0].iter().enumerate() {
            assert!(
                (cov[(i, i)] / target - 1.0).abs() < 0.05,
                "var {i} = {}",
                cov[(i, i)]
            );
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(cov[(i, j)].abs() < 0.15);
                }
            }
        }
        let lv = covariance_matrix(&lat).unwrap();
        assert!((lv[(0, 0)] - 1.0).abs() < 0.02);
        assert!((lv[(1, 1)] - 1.0).abs() < 0.02);
    }

    #[test]
    fn pairwise_triple_construction() {
        let m = gen_pairwise_not_mutual(4096, 2).unwrap();
        for r in m.row_iter() {
            let s = r[0] + r[1];
            assert_eq!(r[2], s - s.floor());
        }
        // Kolmogorov–Smirnov distance of x₃ to U(0,1)
        let mut x3 = m.column(2);
        x3.sort_by(f64::total_cmp);
        let n = x3.len() as f64;
        let ks = x3
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.03, "KS {ks}");
    }

    #[test]
    fn generators_are_pure_functions_of_seed() {
        assert_eq!(
            gen_pairwise_not_mutual(64, 9).unwrap(),
            gen_pairwise_not_mutual(64, 9).unwrap()
        );
        assert_ne!(
            gen_pairwise_not_mutual(64, 9).unwrap(),
            gen_pairwise_not_mutual(64, 10).unwrap()
        );
        assert_eq!(
            gen_pica_observations(64, 1).unwrap(),
            gen_pica_observations(64, 1).unwrap()
        );
    }

    #[test]
    fn correlated_gaussian_is_correlated() {
        let src = CorrelatedGaussian::new(8, 3);
        let x = src.sample(4000, &mut Rng::new(1, 1));
        let cov = covariance_matrix(&x).unwrap();
        let mut max_off = 0.0f64;
        for i in 0..8 {
            for j in 0..i {
                max_off = max_off.max((cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).abs());
            }
        }
        assert!(max_off > 0.3);
    }
}
