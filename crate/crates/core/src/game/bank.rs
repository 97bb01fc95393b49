use serde::{Deserialize, Serialize};

use crate::diff::{Activation, Matrix, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::synth::Rng;

/// Shared architecture of every predictor in a bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    /// Hidden widths; empty means a single affine map.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl PredictorSpec {
    pub fn linear() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Identity,
        }
    }

    /// Two dense layers, hidden width 32, GELU in between, no output activation.
    pub fn two_layer() -> Self {
        Self::mlp(32)
    }

    pub fn mlp(hidden: usize) -> Self {
        Self {
            hidden: vec![hidden],
            activation: Activation::Gelu,
        }
    }
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self::two_layer()
    }
}

/// `d` independent predictors; predictor `i` sees every coordinate except `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorBank {
    spec: PredictorSpec,
    predictors: Vec<Mlp>,
}

pub struct BankCache {
    caches: Vec<MlpCache>,
}

impl PredictorBank {
    pub fn new(dim: usize, spec: PredictorSpec, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config(format!(
                "a predictor bank needs at least 2 dimensions, got {dim}"
            )));
        }
        let mut sizes = vec![dim - 1];
        sizes.extend(&spec.hidden);
        sizes.push(1);
        let predictors = (0..dim)
            .map(|_| Mlp::init(&sizes, spec.activation, Activation::Identity, rng))
            .collect::<Result<_>>()?;
        Ok(Self { spec, predictors })
    }

    /// Builds a bank from explicit predictors, each mapping `d − 1` inputs to one output.
    pub fn from_predictors(spec: PredictorSpec, predictors: Vec<Mlp>) -> Result<Self> {
        let d = predictors.len();
        if d < 2 {
            return Err(Error::config(
                "a predictor bank needs at least 2 predictors",
            ));
        }
        for (i, p) in predictors.iter().enumerate() {
            if p.input_dim() != d - 1 || p.output_dim() != 1 {
                return Err(Error::dim(format!(
                    "predictor {i} maps {} -> {}, expected {} -> 1",
                    p.input_dim(),
                    p.output_dim(),
                    d - 1
                )));
            }
        }
        Ok(Self { spec, predictors })
    }

    pub fn dim(&self) -> usize {
        self.predictors.len()
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn predictors(&self) -> &[Mlp] {
        &self.predictors
    }

    pub fn param_count(&self) -> usize {
        self.predictors.iter().map(Mlp::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.predictors.iter().flat_map(|p| p.params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "bank has {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.predictors {
            let k = p.param_count();
            p.set_params(&params[off..off + k])?;
            off += k;
        }
        Ok(())
    }

    fn check_input(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.dim() {
            return Err(Error::dim(format!(
                "bank of {} predictors applied to {} columns",
                self.dim(),
                z.cols()
            )));
        }
        Ok(())
    }

    /// Column `i` of the result is predictor `i` applied to `z` without column `i`.
    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        self.check_input(z)?;
        let mut out = Matrix::zeros(z.rows(), self.dim());
        for (i, p) in self.predictors.iter().enumerate() {
            let col = p.forward(&z.without_column(i))?;
            out.set_column(i, col.data());
        }
        Ok(out)
    }

    pub fn forward_cached(&self, z: &Matrix) -> Result<(Matrix, BankCache)> {
        self.check_input(z)?;
        let mut out = Matrix::zeros(z.rows(), self.dim());
        let mut caches = Vec::with_capacity(self.dim());
        for (i, p) in self.predictors.iter().enumerate() {
            let (col, cache) = p.forward_cached(&z.without_column(i))?;
            out.set_column(i, col.data());
            caches.push(cache);
        }
        Ok((out, BankCache { caches }))
    }

    /// Gradients of `⟨upstream, forward(z)⟩`: flat parameter gradient and
    /// the gradient w.r.t. `z` (each predictor scatters into the columns it reads).
    pub fn backward_cached(
        &self,
        cache: &BankCache,
        upstream: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        self.check_input(upstream)?;
        let n = upstream.rows();
        let d = self.dim();
        let mut params = Vec::with_capacity(self.param_count());
        let mut input = Matrix::zeros(n, d);
        for (i, (p, c)) in self.predictors.iter().zip(&cache.caches).enumerate() {
            let up = Matrix::column_vector(&upstream.column(i));
            let g = p.backward_cached(c, &up)?;
            params.extend_from_slice(&g.params);
            for r in 0..n {
                let src = g.input.row(r);
                let dst = input.row_mut(r);
                for (k, v) in src.iter().enumerate() {
                    let j = if k < i { k } else { k + 1 };
                    dst[j] += v;
                }
            }
        }
        Ok((params, input))
    }

    pub fn backward(&self, z: &Matrix, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let (_, cache) = self.forward_cached(z)?;
        self.backward_cached(&cache, upstream)
    }
}
