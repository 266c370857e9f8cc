//! Small feed-forward encoder with explicit forward and backward passes.
//!
//! The network is a stack of affine layers with rectifier activations on the
//! hidden layers and identity on the output layer, followed by a
//! length-normalization step so every embedding row has unit L2 norm. All
//! arithmetic is `f64`; gradient checks depend on it.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};

/// Pre-normalization vectors shorter than this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectifier,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. The rectifier kink at
    /// zero takes the subgradient 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `z = W a + b` with `W` of shape out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// All learnable parameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
}

impl EncoderParams {
    /// Deterministic initialization: weights uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero. Hidden layers get a
    /// rectifier, the output layer is identity (normalization happens in
    /// `forward`).
    pub fn init(seed: u64, layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least input and output dims, got {:?}",
                layer_dims
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "all layer dims must be positive, got {:?}",
                layer_dims
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[k], layer_dims[k + 1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let mut weights = Matrix::zeros(fan_out, fan_in);
            for w in weights.data_mut() {
                *w = dist.sample(&mut rng);
            }
            let activation = if k + 1 == n_layers {
                Activation::Identity
            } else {
                Activation::Rectifier
            };
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        Ok(EncoderParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    /// Checks the structural invariants: consecutive dims chain and every
    /// value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("encoder has no layers".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}: bias len {} != out dim {}",
                    k,
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if k > 0 && layer.in_dim() != self.layers[k - 1].out_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}: in dim {} != previous out dim {}",
                    k,
                    layer.in_dim(),
                    self.layers[k - 1].out_dim()
                )));
            }
            let finite = layer.weights.is_finite() && layer.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Numerical(format!(
                    "layer {} contains non-finite parameters",
                    k
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Flat read access for gradient checking: weights then bias, layer by
    /// layer.
    pub fn param(&self, idx: usize) -> f64 {
        let (k, off) = self.locate(idx);
        let layer = &self.layers[k];
        let nw = layer.weights.data().len();
        if off < nw {
            layer.weights.data()[off]
        } else {
            layer.bias[off - nw]
        }
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (k, off) = self.locate(idx);
        let layer = &mut self.layers[k];
        let nw = layer.weights.data().len();
        if off < nw {
            &mut layer.weights.data_mut()[off]
        } else {
            &mut layer.bias[off - nw]
        }
    }

    /// Human-readable name of a flat coordinate, e.g. `layer1.weights[3,2]`.
    pub fn param_name(&self, idx: usize) -> String {
        let (k, off) = self.locate(idx);
        let layer = &self.layers[k];
        let nw = layer.weights.data().len();
        if off < nw {
            let cols = layer.weights.cols();
            format!("layer{}.weights[{},{}]", k, off / cols, off % cols)
        } else {
            format!("layer{}.bias[{}]", k, off - nw)
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (k, layer) in self.layers.iter().enumerate() {
            let n = layer.weights.data().len() + layer.bias.len();
            if idx < n {
                return (k, idx);
            }
            idx -= n;
        }
        panic!("parameter index out of range");
    }
}

/// Gradients (or any accumulator) shaped exactly like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, params: &EncoderParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.same_shape(&p.weights) && g.bias.len() == p.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Flat view in the same order as `EncoderParams::param`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// Everything `forward` computes, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Network input, N x D.
    pub inputs: Matrix,
    /// Per-layer pre-activations `z`.
    pub pre_activations: Vec<Matrix>,
    /// Per-layer post-activations; the last one is the pre-normalization
    /// output.
    pub activations: Vec<Matrix>,
    /// L2 norm of each pre-normalization row.
    pub norms: Vec<f64>,
    /// Unit-row embeddings, N x E.
    pub embeddings: Matrix,
}

impl ForwardTrace {
    pub fn pre_norm(&self) -> &Matrix {
        self.activations.last().expect("trace has layers")
    }
}

/// Runs the encoder on a batch of row vectors and returns the full trace.
pub fn forward(params: &EncoderParams, inputs: &Matrix) -> Result<ForwardTrace> {
    params.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::ShapeMismatch("input batch is empty".into()));
    }
    if inputs.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input dim {} != encoder input dim {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let n = inputs.rows();
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut activations = Vec::with_capacity(params.layers.len());
    let mut current = inputs.clone();
    for layer in &params.layers {
        let mut z = Matrix::zeros(n, layer.out_dim());
        for i in 0..n {
            let a_in = current.row(i);
            let z_row = z.row_mut(i);
            for (o, z_o) in z_row.iter_mut().enumerate() {
                *z_o = dot(layer.weights.row(o), a_in) + layer.bias[o];
            }
        }
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = layer.activation.apply(*v);
        }
        pre_activations.push(z);
        activations.push(a.clone());
        current = a;
    }

    let pre_norm = activations.last().expect("at least one layer");
    let mut norms = Vec::with_capacity(n);
    let mut embeddings = Matrix::zeros(n, pre_norm.cols());
    for i in 0..n {
        let x = pre_norm.row(i);
        let norm = l2_norm(x);
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateEmbedding(format!(
                "row {} has pre-normalization norm {:.3e}",
                i, norm
            )));
        }
        for (j, v) in x.iter().enumerate() {
            embeddings.set(i, j, v / norm);
        }
        norms.push(norm);
    }

    Ok(ForwardTrace {
        inputs: inputs.clone(),
        pre_activations,
        activations,
        norms,
        embeddings,
    })
}

/// Backward pass of `y = x / ||x||`: applies the Jacobian
/// `(I - y y^T) / ||x||` to the upstream gradient `g`.
pub fn l2_normalize_backward(x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if x.len() != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector len {} != gradient len {}",
            x.len(),
            g.len()
        )));
    }
    let norm = l2_norm(x);
    if norm < DEGENERATE_NORM {
        return Err(Error::DegenerateEmbedding(format!(
            "cannot backpropagate through norm {:.3e}",
            norm
        )));
    }
    let y: Vec<f64> = x.iter().map(|v| v / norm).collect();
    let radial = dot(g, &y);
    Ok(g.iter()
        .zip(&y)
        .map(|(gi, yi)| (gi - radial * yi) / norm)
        .collect())
}

/// Backpropagates `grad_y` (gradient with respect to the unit embeddings)
/// through the normalization and every layer, returning parameter gradients.
pub fn backward(params: &EncoderParams, trace: &ForwardTrace, grad_y: &Matrix) -> Result<Gradients> {
    if !grad_y.same_shape(&trace.embeddings) {
        return Err(Error::ShapeMismatch(format!(
            "grad shape {}x{} != embeddings {}x{}",
            grad_y.rows(),
            grad_y.cols(),
            trace.embeddings.rows(),
            trace.embeddings.cols()
        )));
    }
    if trace.activations.len() != params.layers.len() {
        return Err(Error::ShapeMismatch(
            "trace does not match the parameter stack".into(),
        ));
    }
    let n = trace.inputs.rows();
    let mut grads = Gradients::zeros_like(params);

    // Through the length normalization.
    let e = trace.embeddings.cols();
    let mut delta = Matrix::zeros(n, e);
    for i in 0..n {
        let gx = l2_normalize_backward(trace.pre_norm().row(i), grad_y.row(i))?;
        delta.row_mut(i).copy_from_slice(&gx);
    }

    // Through the layers, last to first.
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let z = &trace.pre_activations[k];
        let layer_input: &Matrix = if k == 0 {
            &trace.inputs
        } else {
            &trace.activations[k - 1]
        };
        let mut delta_prev = Matrix::zeros(n, layer.in_dim());
        for i in 0..n {
            let a_in = layer_input.row(i);
            let dprev = delta_prev.row_mut(i);
            for o in 0..layer.out_dim() {
                let dz = delta.get(i, o) * layer.activation.derivative(z.get(i, o));
                if dz == 0.0 {
                    continue;
                }
                let w_row = grads.layers[k].weights.row_mut(o);
                for (j, w) in w_row.iter_mut().enumerate() {
                    *w += dz * a_in[j];
                }
                grads.layers[k].bias[o] += dz;
                for (j, d) in dprev.iter_mut().enumerate() {
                    *d += dz * layer.weights.get(o, j);
                }
            }
        }
        delta = delta_prev;
    }
    Ok(grads)
}
