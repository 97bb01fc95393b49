//! Dense layers and multi-layer perceptrons with hand-derived reverse mode.
//!
//! Parameters of an [`Mlp`] are exposed as one flat vector, layer by layer,
//! each layer contributing its weight (row-major, `out × in`) followed by
//! its bias. Gradients use the same layout.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::synth::Rng;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    if x > GELU_SATURATION {
        x
    } else if x < -GELU_SATURATION {
        0.0
    } else {
        x * normal_cdf(x)
    }
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    gelu_with_grad(x).1
}

/// Beyond this magnitude both `1 − Φ(|x|)` and `φ(x)` are below 1e-22.
const GELU_SATURATION: f64 = 10.0;

/// `(gelu(x), gelu'(x))` sharing one `erf` evaluation.
#[inline]
fn gelu_with_grad(x: f64) -> (f64, f64) {
    // saturated tails; also keeps exp() away from subnormal results
    if x > GELU_SATURATION {
        return (x, 1.0);
    }
    if x < -GELU_SATURATION {
        return (0.0, 0.0);
    }
    let cdf = normal_cdf(x);
    (x * cdf, cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp())
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            // not `max`, which would turn NaN into 0 and hide a diverged input
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Gelu => gelu(x),
        }
    }

    /// Value and derivative at the pre-activation value.
    #[inline]
    pub fn apply_with_grad(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => gelu_with_grad(x),
            other => (other.apply(x), other.derivative(x)),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => gelu_grad(pre),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::dim(format!(
                "layer weight has {} outputs but bias has {}",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform ±√(6/(fan_in+fan_out)) weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Self {
            weight: Matrix::from_vec(output, input, data).expect("sized buffer"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "layer expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut pre = x.matmul_t(&self.weight)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(pre)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    /// Activation derivative at each pre-activation; `None` for identity layers.
    deriv: Vec<Option<Matrix>>,
}

/// Reverse-mode result: flat parameter gradient and gradient w.r.t. the input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Matrix,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dim(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised net with widths `sizes[0] → … → sizes[last]`.
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("need at least input and output width"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = layer.pre_activation(&h)?;
            if act != Activation::Identity {
                h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut deriv = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut out = layer.pre_activation(&h)?;
            let act = layer.activation;
            if act == Activation::Identity {
                deriv.push(None);
            } else {
                let mut dv = Vec::with_capacity(out.data().len());
                for o in out.data_mut() {
                    let (v, g) = act.apply_with_grad(*o);
                    *o = v;
                    dv.push(g);
                }
                deriv.push(Some(Matrix::from_vec(out.rows(), out.cols(), dv)?));
            }
            inputs.push(h);
            h = out;
        }
        Ok((h, MlpCache { inputs, deriv }))
    }

    /// Exact gradients of `⟨upstream, forward(x)⟩` w.r.t. all parameters and `x`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(&self, cache: &MlpCache, upstream: &Matrix) -> Result<Gradients> {
        let n = cache.inputs[0].rows();
        if upstream.shape() != (n, self.output_dim()) {
            return Err(Error::dim(format!(
                "upstream is {}x{}, forward output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                n,
                self.output_dim()
            )));
        }
        let mut per_layer: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if let Some(dv) = &cache.deriv[li] {
                for (gv, d) in g.data_mut().iter_mut().zip(dv.data()) {
                    *gv *= d;
                }
            }
            // g: n × out ; input: n × in
            let gw = g.t_matmul(&cache.inputs[li])?;
            let mut gb = vec![0.0; layer.output_dim()];
            for r in g.row_iter() {
                for (b, v) in gb.iter_mut().zip(r) {
                    *b += v;
                }
            }
            let mut flat = gw.into_data();
            flat.extend_from_slice(&gb);
            per_layer.push(flat);
            g = g.matmul(&layer.weight)?;
        }
        per_layer.reverse();
        Ok(Gradients {
            params: per_layer.concat(),
            input: g,
        })
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(act: Activation) -> Mlp {
        Mlp::new(vec![DenseLayer::new(
            Matrix::identity(2),
            vec![0.0; 2],
            act,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_through() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(identity_net(Activation::Identity).forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let y = identity_net(Activation::Relu).forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn gelu_net_matches_scalar_recomputation() {
        let mut rng = Rng::new(11, 0);
        let net = Mlp::init(&[2, 3, 2], Activation::Gelu, Activation::Gelu, &mut rng).unwrap();
        let x = [0.5, -0.3];
        let got = net.forward(&Matrix::from_rows(&[x]).unwrap()).unwrap();

        // Scalar re-evaluation with the textbook GELU written out inline.
        let phi = |v: f64| 0.5 * (1.0 + libm::erf(v / 2f64.sqrt()));
        let mut h = x.to_vec();
        for layer in net.layers() {
            let mut next = Vec::new();
            for o in 0..layer.output_dim() {
                let mut s = layer.bias[o];
                for (i, hv) in h.iter().enumerate() {
                    s += layer.weight[(o, i)] * hv;
                }
                next.push(s * phi(s));
            }
            h = next;
        }
        for (a, b) in got.data().iter().zip(&h) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = identity_net(Activation::Identity);
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 3)),
            Err(Error::Dimension(_))
        ));
        let x = Matrix::zeros(2, 2);
        assert!(net.backward(&x, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_outer_product_sum() {
        let w = Matrix::from_rows(&[[0.3, -0.2, 0.5], [1.0, 0.1, -0.7]]).unwrap();
        let net = Mlp::new(vec![
            DenseLayer::new(w, vec![0.0; 2], Activation::Identity).unwrap()
        ])
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]).unwrap();
        let up = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let g = net.backward(&x, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let expect: f64 = (0..2).map(|r| up[(r, o)] * x[(r, i)]).sum();
                assert!((g.params[o * 3 + i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(3, 1);
        let net = Mlp::init(&[3, 5, 2], Activation::Gelu, Activation::Identity, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]).unwrap();
        let g = net.backward(&x, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.params.iter().all(|v| *v == 0.0));
        assert!(g.input.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gelu_matches_definition_on_grid() {
        for i in -400..=400 {
            let x = i as f64 * 0.02;
            let reference = x * 0.5 * libm::erfc(-x / 2f64.sqrt());
            assert!((gelu(x) - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = Rng::new(5, 2);
        let mut net =
            Mlp::init(&[4, 6, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.param_count());
        assert_eq!(net.param_count(), 4 * 6 + 6 + 6 * 3 + 3);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params(&shifted).unwrap();
        assert_eq!(net.params(), shifted);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut a = Rng::new(9, 4);
        let mut b = Rng::new(9, 4);
        let na = Mlp::init(&[3, 8, 2], Activation::Gelu, Activation::Identity, &mut a).unwrap();
        let nb = Mlp::init(&[3, 8, 2], Activation::Gelu, Activation::Identity, &mut b).unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.2, 2.0]]).unwrap();
        assert_eq!(
            na.forward(&x).unwrap().data(),
            nb.forward(&x).unwrap().data()
        );
    }
}
