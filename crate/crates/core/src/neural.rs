//! Small feed-forward networks used as smooth surrogates.
//!
//! Hidden units use the logistic sigmoid by default, the output unit is
//! linear, and biases are opt-in. Besides the usual value and weight
//! gradient, nets expose exact input gradients and Hessians (forward-mode
//! propagation of first and second derivatives) together with a bound on
//! the Hessian entries that holds over the whole input space.
//!
//! Inputs pass through an affine map `(x − center)/scale` and the output
//! through `offset + scale·y`, so training can work in standardized
//! coordinates while callers see the original ones.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, SymMatrix};
use crate::newton_model::QuadraticModel;
use crate::sampling::{random_ball_point, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("input has dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training diverged (non-finite loss)")]
    Diverged,
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Identity,
    /// Heaviside step, `1` for `t ≥ 0`.
    Step,
    /// `σ(k·t)` with sharpness `k`.
    ScaledSigmoid(f64),
}

impl Activation {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(t),
            Activation::Identity => t,
            Activation::Step => {
                if t >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::ScaledSigmoid(k) => sigmoid(k * t),
        }
    }

    /// First and second derivatives at `t`.
    pub fn derivatives(self, t: f64) -> (f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(t);
                (s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s))
            }
            Activation::Identity => (1.0, 0.0),
            Activation::Step => (0.0, 0.0),
            Activation::ScaledSigmoid(k) => {
                let s = sigmoid(k * t);
                (k * s * (1.0 - s), k * k * s * (1.0 - s) * (1.0 - 2.0 * s))
            }
        }
    }

    /// Suprema of `|φ'|` and `|φ''|` over the real line.
    pub fn derivative_bounds(self) -> (f64, f64) {
        let d2 = 1.0 / (6.0 * 3f64.sqrt());
        match self {
            Activation::Sigmoid => (0.25, d2),
            Activation::Identity => (1.0, 0.0),
            Activation::Step => (0.0, 0.0),
            Activation::ScaledSigmoid(k) => (0.25 * k.abs(), d2 * k * k),
        }
    }

    fn name(self) -> String {
        match self {
            Activation::Sigmoid => "sigmoid".into(),
            Activation::Identity => "identity".into(),
            Activation::Step => "step".into(),
            Activation::ScaledSigmoid(k) => format!("scaled_sigmoid:{k:.16e}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            "step" => Some(Activation::Step),
            _ => s
                .strip_prefix("scaled_sigmoid:")
                .and_then(|k| k.parse().ok())
                .map(Activation::ScaledSigmoid),
        }
    }
}

/// Fully connected layer, `z = φ(W z_prev + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, bias: bool, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: bias.then(|| vec![0.0; outputs]),
            activation,
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|k| {
                let row = &self.weights[k * self.inputs..(k + 1) * self.inputs];
                linalg::dot(row, z) + self.bias.as_ref().map_or(0.0, |b| b[k])
            })
            .collect()
    }
}

/// Affine input normalization `(x − center)/scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    pub center: Vec<f64>,
    pub scale: f64,
}

/// Affine output map `offset + scale·y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMap {
    pub offset: f64,
    pub scale: f64,
}

impl Default for OutputMap {
    fn default() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

/// Value, input gradient and input Hessian at one point.
#[derive(Debug, Clone)]
pub struct InputDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    layers: Vec<Layer>,
    input: InputMap,
    output: OutputMap,
}

impl FeedForwardNet {
    /// Zero-weight net with the given layer sizes (input first, output last).
    /// Hidden layers use `hidden`, the output layer is linear.
    pub fn zeros(sizes: &[usize], bias: bool, hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(r, w)| {
                let act = if r == last { Activation::Identity } else { hidden };
                Layer::zeros(w[0], w[1], bias, act)
            })
            .collect();
        Self {
            layers,
            input: InputMap {
                center: vec![0.0; sizes[0]],
                scale: 1.0,
            },
            output: OutputMap::default(),
        }
    }

    /// Sigmoid net with weights uniform in `±1/√fan_in`.
    pub fn random(sizes: &[usize], bias: bool, seed: u64) -> Self {
        let mut net = Self::zeros(sizes, bias, Activation::Sigmoid);
        let mut rng = rng_from_seed(seed);
        for layer in &mut net.layers {
            let r = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-r..=r);
            }
            if let Some(b) = &mut layer.bias {
                for w in b {
                    *w = rng.random_range(-r..=r);
                }
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NeuralError> {
        let first = layers.first().ok_or_else(|| NeuralError::Invalid("no layers".into()))?;
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(NeuralError::Invalid(format!(
                    "layer widths {} and {} do not chain",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs
                || l.bias.as_ref().is_some_and(|b| b.len() != l.outputs)
            {
                return Err(NeuralError::Invalid("weight shape mismatch".into()));
            }
        }
        if layers.last().map(|l| l.outputs) != Some(1) {
            return Err(NeuralError::Invalid("output layer must have one unit".into()));
        }
        let n = first.inputs;
        Ok(Self {
            layers,
            input: InputMap {
                center: vec![0.0; n],
                scale: 1.0,
            },
            output: OutputMap::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_map(&self) -> &InputMap {
        &self.input
    }

    pub fn output_map(&self) -> OutputMap {
        self.output
    }

    pub fn set_input_map(&mut self, center: Vec<f64>, scale: f64) {
        assert_eq!(center.len(), self.input_dim());
        self.input = InputMap { center, scale };
    }

    pub fn set_output_map(&mut self, offset: f64, scale: f64) {
        self.output = OutputMap { offset, scale };
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            if let Some(b) = &l.bias {
                p.extend_from_slice(b);
            }
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            if let Some(b) = &mut l.bias {
                let nb = b.len();
                b.copy_from_slice(&p[k..k + nb]);
                k += nb;
            }
        }
    }

    pub fn weights_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input.center)
            .map(|(a, c)| (a - c) / self.input.scale)
            .collect()
    }

    /// Raw network output on normalized input.
    fn raw_forward(&self, z0: &[f64]) -> f64 {
        let mut z = z0.to_vec();
        for l in &self.layers {
            z = l
                .pre_activation(&z)
                .into_iter()
                .map(|a| l.activation.value(a))
                .collect();
        }
        z[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NeuralError> {
        self.check_dim(x)?;
        Ok(self.value(x))
    }

    /// Forward pass without the dimension check.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.output.offset + self.output.scale * self.raw_forward(&self.normalize(x))
    }

    /// Gradient of `mean_i (m(x_i) − y_i)²` with respect to [`Self::params`],
    /// together with the loss value.
    pub fn weight_gradients(&self, batch: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
        let refs: Vec<(&[f64], f64)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        self.mse_gradient(&refs)
    }

    fn mse_gradient(&self, batch: &[(&[f64], f64)]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let nb = batch.len().max(1) as f64;
        for &(x, y) in batch {
            let mut zs = vec![self.normalize(x)];
            let mut pre = Vec::with_capacity(self.layers.len());
            for l in &self.layers {
                let a = l.pre_activation(zs.last().expect("nonempty"));
                zs.push(a.iter().map(|&t| l.activation.value(t)).collect());
                pre.push(a);
            }
            let out = self.output.offset + self.output.scale * zs.last().expect("nonempty")[0];
            let r = out - y;
            loss += r * r / nb;
            // δ at the last layer's pre-activation.
            let mut delta = vec![2.0 * r / nb * self.output.scale];
            let offsets = self.param_offsets();
            for (li, l) in self.layers.iter().enumerate().rev() {
                for (k, d) in delta.iter_mut().enumerate() {
                    *d *= l.activation.derivatives(pre[li][k]).0;
                }
                let zin = &zs[li];
                let base = offsets[li];
                for k in 0..l.outputs {
                    for q in 0..l.inputs {
                        grad[base + k * l.inputs + q] += delta[k] * zin[q];
                    }
                }
                if l.bias.is_some() {
                    let bb = base + l.weights.len();
                    for k in 0..l.outputs {
                        grad[bb + k] += delta[k];
                    }
                }
                if li > 0 {
                    delta = (0..l.inputs)
                        .map(|q| (0..l.outputs).map(|k| l.weight(k, q) * delta[k]).sum())
                        .collect();
                }
            }
        }
        (loss, grad)
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            out.push(k);
            k += l.param_count();
        }
        out
    }

    /// Exact value, input gradient and input Hessian by forward-mode
    /// propagation of first and second derivatives.
    pub fn input_derivatives(&self, x: &[f64]) -> InputDerivatives {
        let n = self.input_dim();
        let s = self.input.scale;
        let mut z = self.normalize(x);
        let mut jac: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|r| if i == r { 1.0 / s } else { 0.0 }).collect())
            .collect();
        let mut hes: Vec<Vec<f64>> = vec![vec![0.0; n * n]; n];
        for l in &self.layers {
            let a = l.pre_activation(&z);
            let mut nz = Vec::with_capacity(l.outputs);
            let mut nj = Vec::with_capacity(l.outputs);
            let mut nh = Vec::with_capacity(l.outputs);
            for k in 0..l.outputs {
                let mut ja = vec![0.0; n];
                let mut ha = vec![0.0; n * n];
                for q in 0..l.inputs {
                    let w = l.weight(k, q);
                    if w == 0.0 {
                        continue;
                    }
                    for r in 0..n {
                        ja[r] += w * jac[q][r];
                    }
                    for (h, hq) in ha.iter_mut().zip(&hes[q]) {
                        *h += w * hq;
                    }
                }
                let (d1, d2) = l.activation.derivatives(a[k]);
                let jz: Vec<f64> = ja.iter().map(|v| d1 * v).collect();
                let mut hz = vec![0.0; n * n];
                for r in 0..n {
                    for c in 0..n {
                        hz[r * n + c] = d2 * ja[r] * ja[c] + d1 * ha[r * n + c];
                    }
                }
                nz.push(l.activation.value(a[k]));
                nj.push(jz);
                nh.push(hz);
            }
            z = nz;
            jac = nj;
            hes = nh;
        }
        let sc = self.output.scale;
        InputDerivatives {
            value: self.output.offset + sc * z[0],
            gradient: jac[0].iter().map(|v| sc * v).collect(),
            hessian: SymMatrix::from_upper(n, |r, c| 0.5 * sc * (hes[0][r * n + c] + hes[0][c * n + r])),
        }
    }

    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.input_derivatives(x).gradient
    }

    /// Input Hessian and the certified entry bound from [`Self::hessian_bound`].
    pub fn input_hessian(&self, x: &[f64]) -> (SymMatrix, f64) {
        (self.input_derivatives(x).hessian, self.hessian_bound())
    }

    /// Bound on `|∂²m/∂x_r∂x_s|` valid for every input, from propagating
    /// weight magnitudes through the suprema of `|φ'|` and `|φ''|`.
    pub fn hessian_bound(&self) -> f64 {
        let n = self.input_dim();
        let mut g = vec![1.0 / self.input.scale; n];
        let mut h = vec![0.0; n];
        for l in &self.layers {
            let (d1, d2) = l.activation.derivative_bounds();
            let mut ng = Vec::with_capacity(l.outputs);
            let mut nh = Vec::with_capacity(l.outputs);
            for k in 0..l.outputs {
                let ga: f64 = (0..l.inputs).map(|q| l.weight(k, q).abs() * g[q]).sum();
                let ha: f64 = (0..l.inputs).map(|q| l.weight(k, q).abs() * h[q]).sum();
                ng.push(d1 * ga);
                nh.push(d2 * ga * ga + d1 * ha);
            }
            g = ng;
            h = nh;
        }
        self.output.scale.abs() * h[0]
    }

    fn single_hidden_parts(&self) -> Result<(&Layer, &Layer), NeuralError> {
        match self.layers.as_slice() {
            [h, o] if h.activation == Activation::Sigmoid && o.activation == Activation::Identity => Ok((h, o)),
            _ => Err(NeuralError::Invalid(
                "closed forms need one sigmoid hidden layer and a linear output".into(),
            )),
        }
    }

    /// `∂m/∂x_r = Σ_j w_j w_jr σ(a_j)(1 − σ(a_j))` for one hidden layer.
    pub fn gradient_closed_form(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let (hid, out) = self.single_hidden_parts()?;
        let a = hid.pre_activation(&self.normalize(x));
        let f = self.output.scale / self.input.scale;
        Ok((0..self.input_dim())
            .map(|r| {
                f * (0..hid.outputs)
                    .map(|j| {
                        let s = sigmoid(a[j]);
                        out.weight(0, j) * hid.weight(j, r) * (s - s * s)
                    })
                    .sum::<f64>()
            })
            .collect())
    }

    /// `∂²m/∂x_r∂x_s = Σ_j w_j w_jr w_js [σ(1−σ) − 2σ²(1−σ)]` for one hidden layer.
    pub fn hessian_closed_form(&self, x: &[f64]) -> Result<SymMatrix, NeuralError> {
        let (hid, out) = self.single_hidden_parts()?;
        let a = hid.pre_activation(&self.normalize(x));
        let f = self.output.scale / (self.input.scale * self.input.scale);
        Ok(SymMatrix::from_upper(self.input_dim(), |r, c| {
            f * (0..hid.outputs)
                .map(|j| {
                    let s = sigmoid(a[j]);
                    let curv = s * (1.0 - s) - 2.0 * s * s * (1.0 - s);
                    out.weight(0, j) * hid.weight(j, r) * hid.weight(j, c) * curv
                })
                .sum::<f64>()
        }))
    }

    /// Plain-text form: header, maps, then one block per layer with its
    /// weight rows (bias appended to each row when present).
    pub fn to_text(&self) -> String {
        let mut s = String::from("ffnet 1\n");
        let sizes: Vec<String> = self.layer_sizes().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "sizes {}", sizes.join(" "));
        let _ = write!(s, "input_center");
        for c in &self.input.center {
            let _ = write!(s, " {c:.16e}");
        }
        let _ = writeln!(s, "\ninput_scale {:.16e}", self.input.scale);
        let _ = writeln!(s, "output {:.16e} {:.16e}", self.output.offset, self.output.scale);
        for l in &self.layers {
            let _ = writeln!(
                s,
                "layer {} {}",
                l.activation.name(),
                if l.bias.is_some() { "bias" } else { "nobias" }
            );
            for k in 0..l.outputs {
                let mut row: Vec<String> = (0..l.inputs).map(|q| format!("{:.16e}", l.weight(k, q))).collect();
                if let Some(b) = &l.bias {
                    row.push(format!("{:.16e}", b[k]));
                }
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, m: &str| NeuralError::Parse {
            line: line + 1,
            message: m.to_string(),
        };
        let mut next = |what: &str| -> Result<(usize, Vec<String>), NeuralError> {
            let (i, l) = lines.next().ok_or_else(|| err(0, &format!("missing {what}")))?;
            Ok((i, l.split_whitespace().map(String::from).collect()))
        };
        let nums = |i: usize, toks: &[String]| -> Result<Vec<f64>, NeuralError> {
            toks.iter()
                .map(|t| t.parse::<f64>().map_err(|e| err(i, &e.to_string())))
                .collect()
        };
        let (i, head) = next("header")?;
        if head != ["ffnet", "1"] {
            return Err(err(i, "expected `ffnet 1`"));
        }
        let (i, sizes) = next("sizes")?;
        if sizes.first().map(String::as_str) != Some("sizes") {
            return Err(err(i, "expected sizes"));
        }
        let sizes: Vec<usize> = sizes[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| err(i, "bad size")))
            .collect::<Result<_, _>>()?;
        if sizes.len() < 2 {
            return Err(err(i, "need at least two sizes"));
        }
        let (i, center) = next("input_center")?;
        let center = nums(i, &center[1..])?;
        let (i, scale) = next("input_scale")?;
        let scale = *nums(i, &scale[1..])?.first().ok_or_else(|| err(i, "missing scale"))?;
        let (i, out) = next("output")?;
        let out = nums(i, &out[1..])?;
        if out.len() != 2 {
            return Err(err(i, "expected offset and scale"));
        }
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let (i, head) = next("layer")?;
            if head.len() != 3 || head[0] != "layer" {
                return Err(err(i, "expected `layer <activation> <bias|nobias>`"));
            }
            let act = Activation::parse(&head[1]).ok_or_else(|| err(i, "unknown activation"))?;
            let bias = head[2] == "bias";
            let mut layer = Layer::zeros(w[0], w[1], bias, act);
            for k in 0..w[1] {
                let (i, row) = next("weight row")?;
                let row = nums(i, &row)?;
                if row.len() != w[0] + bias as usize {
                    return Err(err(i, "wrong row length"));
                }
                layer.weights[k * w[0]..(k + 1) * w[0]].copy_from_slice(&row[..w[0]]);
                if let Some(b) = &mut layer.bias {
                    b[k] = row[w[0]];
                }
            }
            layers.push(layer);
        }
        let mut net = Self::from_layers(layers)?;
        if center.len() != net.input_dim() {
            return Err(err(0, "input_center has wrong length"));
        }
        net.set_input_map(center, scale);
        net.set_output_map(out[0], out[1]);
        Ok(net)
    }
}

/// Anything that can stand in for the objective near the iterate.
pub trait Surrogate {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> SymMatrix;
}

impl Surrogate for FeedForwardNet {
    fn value(&self, x: &[f64]) -> f64 {
        FeedForwardNet::value(self, x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.input_gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> SymMatrix {
        self.input_derivatives(x).hessian
    }
}

impl Surrogate for QuadraticModel {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.gradient_at(x)
    }
    fn hessian(&self, _x: &[f64]) -> SymMatrix {
        self.hessian.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    GradientDescent,
    /// Heavy-ball momentum with the given coefficient.
    Momentum(f64),
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of samples used for training; `1.0` disables the holdout.
    pub split_fraction: f64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without test-loss improvement and keep
    /// the best-test weights.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.05,
            seed: 0,
            split_fraction: 0.8,
            optimizer: Optimizer::Momentum(0.9),
            patience: None,
        }
    }
}

/// Architecture of a regression net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub bias: bool,
}

/// Sample with its position in the caller's list, so holdout discipline
/// can be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedSample {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FeedForwardNet,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Every sample index that entered a gradient computation.
    pub gradient_indices: BTreeSet<usize>,
    pub epochs_run: usize,
}

impl TrainOutcome {
    /// Test indices that leaked into training gradients.
    pub fn leaked(&self) -> Vec<usize> {
        self.test_indices
            .iter()
            .copied()
            .filter(|i| self.gradient_indices.contains(i))
            .collect()
    }
}

/// Shuffles `0..n` and splits it at `fraction` (at least one training index).
pub fn split_indices<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * fraction).round() as usize).clamp(n.min(1), n);
    let test = idx.split_off(n_train);
    (idx, test)
}

fn mse(net: &FeedForwardNet, samples: &[&IndexedSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| (net.value(&s.x) - s.y).powi(2)).sum::<f64>() / samples.len() as f64
}

/// Sum over groups of each group's mean squared error, so every group
/// weighs the same regardless of its size.
pub fn balanced_mse(net: &FeedForwardNet, groups: &[Vec<&IndexedSample>]) -> f64 {
    groups.iter().map(|g| mse(net, g)).sum()
}

/// Minimizes the balanced MSE over `train` groups, reporting it on `test`
/// groups. Only `train` samples ever reach the gradient.
pub fn fit_balanced(
    mut net: FeedForwardNet,
    train: &[Vec<&IndexedSample>],
    test: &[Vec<&IndexedSample>],
    cfg: &TrainConfig,
) -> Result<(FeedForwardNet, f64, f64, BTreeSet<usize>, usize), NeuralError> {
    let mut touched = BTreeSet::new();
    let groups: Vec<Vec<(&[f64], f64)>> = train
        .iter()
        .map(|g| g.iter().map(|s| (s.x.as_slice(), s.y)).collect())
        .collect();
    for g in train {
        touched.extend(g.iter().map(|s| s.index));
    }
    let has_test = test.iter().any(|g| !g.is_empty());
    let mut params = net.params();
    let np = params.len();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        net.set_params(&params);
        let mut grad = vec![0.0; np];
        let mut loss = 0.0;
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let (l, gr) = net.mse_gradient(g);
            loss += l;
            for (a, b) in grad.iter_mut().zip(gr) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(NeuralError::Diverged);
        }
        if let (Some(patience), true) = (cfg.patience, has_test) {
            let t = balanced_mse(&net, test);
            if best.as_ref().is_none_or(|(b, _)| t < *b) {
                best = Some((t, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > patience {
                    break;
                }
            }
        }
        epochs_run = epoch + 1;
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
            Optimizer::Momentum(beta) => {
                for ((p, v), g) in params.iter_mut().zip(m1.iter_mut()).zip(&grad) {
                    *v = beta * *v + g;
                    *p -= cfg.learning_rate * *v;
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
                let t = (epoch + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..np {
                    m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                    m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                    params[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    net.set_params(&params);
    if let Some((t, p)) = best {
        if t < balanced_mse(&net, test) {
            net.set_params(&p);
        }
    }
    if !net.weights_finite() {
        return Err(NeuralError::Diverged);
    }
    let train_loss = balanced_mse(&net, train);
    let test_loss = balanced_mse(&net, test);
    Ok((net, train_loss, test_loss, touched, epochs_run))
}

/// Fits a sigmoid net to `points` by minimizing the training MSE.
///
/// Inputs are mapped into the unit ball around their mean and targets are
/// standardized; the returned net undoes both maps.
pub fn train_regression(points: &[(Vec<f64>, f64)], spec: &NetSpec, cfg: &TrainConfig) -> Result<TrainOutcome, NeuralError> {
    if points.len() < 2 {
        return Err(NeuralError::TooFewSamples {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points[0].0.len();
    for (x, _) in points {
        if x.len() != n {
            return Err(NeuralError::DimensionMismatch {
                expected: n,
                actual: x.len(),
            });
        }
    }
    let mut rng = rng_from_seed(cfg.seed);
    let (train_idx, test_idx) = split_indices(points.len(), cfg.split_fraction, &mut rng);
    let samples: Vec<IndexedSample> = points
        .iter()
        .enumerate()
        .map(|(index, (x, y))| IndexedSample {
            index,
            x: x.clone(),
            y: *y,
        })
        .collect();

    let center: Vec<f64> = (0..n)
        .map(|i| points.iter().map(|(x, _)| x[i]).sum::<f64>() / points.len() as f64)
        .collect();
    let radius = points
        .iter()
        .map(|(x, _)| linalg::distance(x, &center))
        .fold(0.0, f64::max);
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let var = points.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / points.len() as f64;

    let mut sizes = vec![n];
    sizes.extend(&spec.hidden);
    sizes.push(1);
    let mut net = FeedForwardNet::random(&sizes, spec.bias, cfg.seed.wrapping_add(1));
    net.set_input_map(center, if radius > 0.0 { radius } else { 1.0 });
    net.set_output_map(mean, if var > 0.0 { var.sqrt() } else { 1.0 });

    let train: Vec<&IndexedSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let test: Vec<&IndexedSample> = test_idx.iter().map(|&i| &samples[i]).collect();
    // Standardized targets keep the learning rate meaningful across scales.
    let om = net.output_map();
    let std_samples: Vec<IndexedSample> = samples
        .iter()
        .map(|s| IndexedSample {
            index: s.index,
            x: s.x.clone(),
            y: (s.y - om.offset) / om.scale,
        })
        .collect();
    let std_train: Vec<&IndexedSample> = train_idx.iter().map(|&i| &std_samples[i]).collect();
    let std_test: Vec<&IndexedSample> = test_idx.iter().map(|&i| &std_samples[i]).collect();
    let mut unit = net.clone();
    unit.set_output_map(0.0, 1.0);
    let (fitted, _, _, touched, epochs_run) = fit_balanced(unit, &[std_train], &[std_test], cfg)?;
    net.set_params(&fitted.params());
    if var == 0.0 {
        // Constant targets: the offset alone reproduces them.
        net.set_output_map(mean, 0.0);
    }

    Ok(TrainOutcome {
        train_loss: mse(&net, &train),
        test_loss: mse(&net, &test),
        net,
        train_indices: train_idx,
        test_indices: test_idx,
        gradient_indices: touched,
        epochs_run,
    })
}

/// Axis-aligned box `[lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hypercube {
    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v < *b)
    }
}

/// Uniform grid of cubes with edge `edge` covering `[lo, hi]^dim`.
pub fn cube_grid(dim: usize, lo: f64, hi: f64, edge: f64) -> Vec<Hypercube> {
    let per = ((hi - lo) / edge).round() as usize;
    let mut out = Vec::new();
    let total = per.pow(dim as u32);
    for mut k in 0..total {
        let mut lower = Vec::with_capacity(dim);
        for _ in 0..dim {
            lower.push(lo + (k % per) as f64 * edge);
            k /= per;
        }
        let upper = lower.iter().map(|a| a + edge).collect();
        out.push(Hypercube { lower, upper });
    }
    out
}

/// The constructive piecewise-constant approximator `Σ_i f(c_i)·S_{I_i}(x)`.
///
/// Layer 1 holds `s(x_k − a_k)` and `s(x_k − b_k)` for every cube and axis,
/// layer 2 fires when all `n` interval differences are on, and the output
/// weights are the cube values.
pub fn build_hypercube_approximator(cubes: &[(Hypercube, f64)], activation: Activation) -> Result<FeedForwardNet, NeuralError> {
    let Some((first, _)) = cubes.first() else {
        return Err(NeuralError::Invalid("no cubes".into()));
    };
    let n = first.lower.len();
    let k = cubes.len();
    let mut l1 = Layer::zeros(n, 2 * n * k, true, activation);
    let mut l2 = Layer::zeros(2 * n * k, k, true, activation);
    let mut l3 = Layer::zeros(k, 1, false, Activation::Identity);
    for (i, (cube, value)) in cubes.iter().enumerate() {
        if cube.lower.len() != n || cube.upper.len() != n {
            return Err(NeuralError::Invalid("cube dimensions differ".into()));
        }
        for d in 0..n {
            let on = 2 * (i * n + d);
            let off = on + 1;
            l1.weights[on * n + d] = 1.0;
            l1.weights[off * n + d] = 1.0;
            let b = l1.bias.as_mut().expect("bias enabled");
            b[on] = -cube.lower[d];
            b[off] = -cube.upper[d];
            l2.weights[i * 2 * n * k + on] = 1.0;
            l2.weights[i * 2 * n * k + off] = -1.0;
        }
        l2.bias.as_mut().expect("bias enabled")[i] = -(n as f64 - 0.5);
        l3.weights[i] = *value;
    }
    FeedForwardNet::from_layers(vec![l1, l2, l3])
}

/// Monte-Carlo estimate of `(∫|f − m|^q dμ)^{1/q}` for `μ` uniform on the ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelAccuracy {
    pub q: f64,
    pub value: f64,
    pub n_samples: usize,
}

pub fn model_accuracy(
    model: &dyn Fn(&[f64]) -> f64,
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    radius: f64,
    q: f64,
    n_samples: usize,
    seed: u64,
) -> ModelAccuracy {
    let mut rng = rng_from_seed(seed);
    let n = n_samples.max(1);
    let mean = (0..n)
        .map(|_| {
            let x = random_ball_point(&mut rng, center, radius);
            (f(&x) - model(&x)).abs().powf(q)
        })
        .sum::<f64>()
        / n as f64;
    ModelAccuracy {
        q,
        value: mean.powf(1.0 / q),
        n_samples: n,
    }
}

/// Sampled validity test `max |f − m| ≤ κ·radius²`.
pub fn validity_check(
    model: &dyn Fn(&[f64]) -> f64,
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    radius: f64,
    kappa: f64,
    n_samples: usize,
    seed: u64,
) -> bool {
    max_sampled_error(model, f, center, radius, n_samples, seed) <= kappa * radius * radius
}

pub fn max_sampled_error(
    model: &dyn Fn(&[f64]) -> f64,
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = rng_from_seed(seed);
    (0..n_samples.max(1))
        .map(|_| {
            let x = random_ball_point(&mut rng, center, radius);
            (f(&x) - model(&x)).abs()
        })
        .fold(0.0, f64::max)
}
