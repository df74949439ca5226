//! Feedforward multi-label scorer with sigmoid outputs.
//!
//! Parameters are stored per layer as `(weight [out x in], bias [out])`. The
//! canonical flat order used by [`FlatGradient`] and by tangent vectors is
//! layer-major, weight before bias, row-major within each weight matrix.
//!
//! Two differentiation routes are provided: reverse mode ([`grad_loss`],
//! [`ModelParameters::logit_gradient`]) and forward mode
//! ([`ModelParameters::logit_tangents`]), which yields the directional
//! derivative of every output logit along a parameter-space tangent in a
//! single pass.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

const PARAMS_MAGIC: &[u8; 5] = b"RFLP1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer sizes of the scorer: `input_dim -> hidden... -> output_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Config(format!(
                "architecture dimensions must be positive, got {:?}",
                self.dims()
            )));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., output_dim]`
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradient (or tangent) vector in canonical flat parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient(Vec<f64>);

impl FlatGradient {
    pub fn zeros(len: usize) -> Self {
        FlatGradient(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        FlatGradient(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &FlatGradient) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.0.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// `self += other` elementwise.
    pub fn accumulate(&mut self, other: &FlatGradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// Output of a single forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Rows of inputs with per-entry targets in `[0, 1]` and nonnegative weights.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub weights: Array2<f64>,
}

impl Batch {
    /// Missing weights default to all ones.
    pub fn new(
        features: Array2<f64>,
        targets: Array2<f64>,
        weights: Option<Array2<f64>>,
    ) -> Result<Self> {
        let weights = weights.unwrap_or_else(|| Array2::ones(targets.raw_dim()));
        if features.nrows() != targets.nrows() {
            return Err(Error::shape("batch targets rows", features.nrows(), targets.nrows()));
        }
        if weights.dim() != targets.dim() {
            return Err(Error::shape("batch weights columns", targets.ncols(), weights.ncols()));
        }
        Ok(Batch {
            features,
            targets,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Parameters of the scorer. Immutable value; updates return new values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    arch: Architecture,
    layers: Vec<Layer>,
}

struct Trace {
    /// `activations[0]` is the input; `activations[l]` is the output of hidden layer `l`.
    activations: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl ModelParameters {
    /// Fan-in scaled uniform weights `U(-1/sqrt(in), 1/sqrt(in))`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = arch.dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new(-bound, bound);
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(ModelParameters {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        Self::from_flat(arch, &vec![0.0; arch.param_count()])
    }

    pub fn from_layers(arch: &Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let dims = arch.dims();
        if layers.len() + 1 != dims.len() {
            return Err(Error::shape("layer count", dims.len() - 1, layers.len()));
        }
        for (layer, w) in layers.iter().zip(dims.windows(2)) {
            if layer.weight.dim() != (w[1], w[0]) {
                return Err(Error::shape("layer weight", w[1] * w[0], layer.weight.len()));
            }
            if layer.bias.len() != w[1] {
                return Err(Error::shape("layer bias", w[1], layer.bias.len()));
            }
        }
        let params = ModelParameters {
            arch: arch.clone(),
            layers,
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn from_flat(arch: &Architecture, values: &[f64]) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::shape("flat parameters", arch.param_count(), values.len()));
        }
        let mut offset = 0;
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let nw = fan_in * fan_out;
                let weight =
                    Array2::from_shape_vec((fan_out, fan_in), values[offset..offset + nw].to_vec())
                        .expect("weight block length matches its shape");
                offset += nw;
                let bias = Array1::from(values[offset..offset + fan_out].to_vec());
                offset += fan_out;
                Layer { weight, bias }
            })
            .collect();
        let params = ModelParameters {
            arch: arch.clone(),
            layers,
        };
        params.check_finite()?;
        Ok(params)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self
            .layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::Input("parameters contain non-finite values".into()))
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    fn check_inputs(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::shape("input features", self.arch.input_dim, x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("input features contain non-finite values".into()));
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let act = self.arch.activation;
        let last = self.layers.len() - 1;
        let mut activations = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(last);
        for layer in &self.layers[..last] {
            let a = activations.last().unwrap().dot(&layer.weight.t()) + &layer.bias;
            let h = a.mapv(|v| act.apply(v));
            pre.push(a);
            activations.push(h);
        }
        let out = &self.layers[last];
        let logits = activations.last().unwrap().dot(&out.weight.t()) + &out.bias;
        Trace {
            activations,
            pre,
            logits,
        }
    }

    /// Logits for every row of `x` (`[B x K]`).
    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&x)?;
        Ok(self.trace(x).logits)
    }

    /// Clamped sigmoid probabilities for every row of `x` (`[B x K]`).
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self
            .logits_batch(x)?
            .mapv(|z| clamp_probability(sigmoid(z))))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .expect("a slice always forms a single row");
        let logits = self.logits_batch(view)?.row(0).to_vec();
        let probabilities = logits.iter().map(|&z| clamp_probability(sigmoid(z))).collect();
        Ok(Prediction {
            logits,
            probabilities,
        })
    }

    /// Reverse pass given `dlogits` (`[B x K]`, derivative of the objective
    /// with respect to each output logit).
    fn backward(&self, trace: &Trace, dlogits: Array2<f64>) -> FlatGradient {
        let act = self.arch.activation;
        let n_layers = self.layers.len();
        let mut blocks: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
        let mut delta = dlogits;
        for l in (0..n_layers).rev() {
            let input = &trace.activations[l];
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            blocks.push((dw, db));
            if l > 0 {
                let mut dh = delta.dot(&self.layers[l].weight);
                Zip::from(&mut dh)
                    .and(&trace.pre[l - 1])
                    .for_each(|d, &a| *d *= act.derivative(a));
                delta = dh;
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in blocks.iter().rev() {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        FlatGradient(flat)
    }

    /// Reverse-mode gradient of logit `j` at `x` with respect to all parameters.
    pub fn logit_gradient(&self, x: &[f64], j: usize) -> Result<FlatGradient> {
        if j >= self.output_dim() {
            return Err(Error::Input(format!(
                "label index {j} out of range for {} outputs",
                self.output_dim()
            )));
        }
        let view = ArrayView2::from_shape((1, x.len()), x)
            .expect("a slice always forms a single row");
        self.check_inputs(&view)?;
        let trace = self.trace(view);
        let mut seed = Array2::zeros((1, self.output_dim()));
        seed[[0, j]] = 1.0;
        Ok(self.backward(&trace, seed))
    }

    /// Forward-mode pass: for each row of `x`, the directional derivative of
    /// every logit along `tangent`. Returns `[B x K]`.
    pub fn logit_tangents(&self, x: ArrayView2<f64>, tangent: &FlatGradient) -> Result<Array2<f64>> {
        self.check_inputs(&x)?;
        if tangent.len() != self.param_count() {
            return Err(Error::shape("tangent", self.param_count(), tangent.len()));
        }
        let act = self.arch.activation;
        let blocks = split_flat(&self.arch, tangent.values());
        let mut h = x.to_owned();
        let mut dh: Option<Array2<f64>> = None;
        let last = self.layers.len() - 1;
        for (l, (layer, (tw, tb))) in self.layers.iter().zip(blocks).enumerate() {
            let mut da = h.dot(&tw.t()) + tb;
            if let Some(dh) = &dh {
                da += &dh.dot(&layer.weight.t());
            }
            if l == last {
                return Ok(da);
            }
            let a = h.dot(&layer.weight.t()) + &layer.bias;
            Zip::from(&mut da)
                .and(&a)
                .for_each(|d, &a| *d *= act.derivative(a));
            h = a.mapv(|v| act.apply(v));
            dh = Some(da);
        }
        unreachable!("architecture always has an output layer")
    }

    pub fn logit_tangent(&self, x: &[f64], tangent: &FlatGradient) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .expect("a slice always forms a single row");
        Ok(self.logit_tangents(view, tangent)?.row(0).to_vec())
    }

    /// `theta - alpha * grad`.
    pub fn sgd_step(&self, grad: &FlatGradient, alpha: f64) -> Result<Self> {
        if grad.len() != self.param_count() {
            return Err(Error::shape("gradient", self.param_count(), grad.len()));
        }
        let mut offset = 0;
        let mut layers = self.layers.clone();
        for layer in layers.iter_mut() {
            for w in layer.weight.iter_mut() {
                *w -= alpha * grad.0[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b -= alpha * grad.0[offset];
                offset += 1;
            }
        }
        Ok(ModelParameters {
            arch: self.arch.clone(),
            layers,
        })
    }

    /// Applies an arbitrary flat displacement `theta + delta`.
    pub fn displaced(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.param_count() {
            return Err(Error::shape("displacement", self.param_count(), delta.len()));
        }
        let values: Vec<f64> = self.to_flat().iter().zip(delta).map(|(a, b)| a + b).collect();
        Self::from_flat(&self.arch, &values)
    }

    /// Serializes as `RFLP1`, activation code, dimension list, then
    /// little-endian `f64` parameters in canonical order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&[self.arch.activation.code()])?;
        let dims = self.arch.dims();
        w.write_all(&(dims.len() as u64).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in self.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| Error::Input(format!("malformed parameter file: {msg}"));
        let io = |e: std::io::Error| bad(&e.to_string());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != PARAMS_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(io)?;
        let activation = Activation::from_code(code[0]).ok_or_else(|| bad("unknown activation"))?;
        let mut word = [0u8; 8];
        r.read_exact(&mut word).map_err(io)?;
        let n_dims = u64::from_le_bytes(word) as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(bad("implausible layer count"));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            r.read_exact(&mut word).map_err(io)?;
            dims.push(u64::from_le_bytes(word) as usize);
        }
        let arch = Architecture {
            input_dim: dims[0],
            hidden: dims[1..n_dims - 1].to_vec(),
            output_dim: dims[n_dims - 1],
            activation,
        };
        arch.validate()?;
        let mut values = Vec::with_capacity(arch.param_count());
        for _ in 0..arch.param_count() {
            r.read_exact(&mut word).map_err(io)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::from_flat(&arch, &values)
    }
}

/// Per-layer `(weight, bias)` views into a flat canonical-order vector.
fn split_flat<'a>(arch: &Architecture, values: &'a [f64]) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let mut offset = 0;
    arch.dims()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let nw = fan_in * fan_out;
            let weight = ArrayView2::from_shape((fan_out, fan_in), &values[offset..offset + nw])
                .expect("weight block length matches its shape");
            offset += nw;
            let bias = ArrayView1::from(&values[offset..offset + fan_out]);
            offset += fan_out;
            (weight, bias)
        })
        .collect()
}

/// Weighted binary cross entropy `sum_k w_k * BCE(p_k, y_k)` on clamped probabilities.
pub fn bce_loss(pred: &Prediction, target: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let k = pred.probabilities.len();
    if target.len() != k {
        return Err(Error::shape("bce target", k, target.len()));
    }
    if let Some(w) = weights {
        if w.len() != k {
            return Err(Error::shape("bce weights", k, w.len()));
        }
        if w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Input("loss weights must be nonnegative".into()));
        }
    }
    check_targets(target.iter())?;
    Ok((0..k)
        .map(|i| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * bce_term(pred.probabilities[i], target[i])
        })
        .sum())
}

#[inline]
pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = clamp_probability(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn check_targets<'a>(mut targets: impl Iterator<Item = &'a f64>) -> Result<()> {
    if targets.any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::Input("targets must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Summed weighted BCE over the batch and its reverse-mode gradient.
pub fn loss_and_grad(params: &ModelParameters, batch: &Batch) -> Result<(f64, FlatGradient)> {
    if batch.is_empty() {
        return Err(Error::Input("gradient batch is empty".into()));
    }
    let k = params.output_dim();
    if batch.targets.ncols() != k {
        return Err(Error::shape("batch targets columns", k, batch.targets.ncols()));
    }
    check_targets(batch.targets.iter())?;
    if batch.weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Input("loss weights must be nonnegative".into()));
    }
    params.check_inputs(&batch.features.view())?;
    let trace = params.trace(batch.features.view());
    let mut loss = 0.0;
    let mut residual = Array2::zeros(trace.logits.raw_dim());
    Zip::from(&mut residual)
        .and(&trace.logits)
        .and(&batch.targets)
        .and(&batch.weights)
        .for_each(|r, &z, &y, &w| {
            let p = clamp_probability(sigmoid(z));
            loss += w * bce_term(p, y);
            *r = (p - y) * w;
        });
    Ok((loss, params.backward(&trace, residual)))
}

pub fn grad_loss(params: &ModelParameters, batch: &Batch) -> Result<FlatGradient> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

/// Summed weighted BCE without the gradient.
pub fn batch_loss(params: &ModelParameters, batch: &Batch) -> Result<f64> {
    let probs = params.predict_batch(batch.features.view())?;
    if probs.dim() != batch.targets.dim() {
        return Err(Error::shape("batch targets columns", probs.ncols(), batch.targets.ncols()));
    }
    check_targets(batch.targets.iter())?;
    let mut loss = 0.0;
    Zip::from(&probs)
        .and(&batch.targets)
        .and(&batch.weights)
        .for_each(|&p, &y, &w| loss += w * bce_term(p, y));
    Ok(loss)
}

/// Selects rows of a matrix.
pub(crate) fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (dst, &src) in rows.iter().enumerate() {
        out.slice_mut(s![dst, ..]).assign(&m.row(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn linear(w: f64, b: f64) -> ModelParameters {
        ModelParameters::from_flat(&Architecture::new(1, vec![], 1), &[w, b]).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = Architecture::new(4, vec![3], 2);
        let a = ModelParameters::init(&arch, 7).unwrap();
        let b = ModelParameters::init(&arch, 7).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert_ne!(a.to_flat(), ModelParameters::init(&arch, 8).unwrap().to_flat());
    }

    #[test]
    fn param_count_of_single_linear_unit() {
        assert_eq!(Architecture::new(2, vec![], 1).param_count(), 3);
    }

    #[test]
    fn zero_dimension_is_config_error() {
        let err = ModelParameters::init(&Architecture::new(0, vec![3], 2), 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ModelParameters::init(&Architecture::new(2, vec![0], 2), 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let p = ModelParameters::zeros(&Architecture::new(3, vec![4], 2)).unwrap();
        let pred = p.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(pred.logits, vec![0.0, 0.0]);
        assert_eq!(pred.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn single_linear_layer_forward() {
        let pred = linear(2.0, 0.0).forward(&[1.0]).unwrap();
        assert_eq!(pred.logits, vec![2.0]);
        assert_abs_diff_eq!(pred.probabilities[0], 1.0 / (1.0 + (-2.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(pred.probabilities[0], 0.8807970779778823, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = linear(1.0, 0.0);
        assert!(matches!(p.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(p.forward(&[f64::NAN]), Err(Error::Input(_))));
    }

    #[test]
    fn probabilities_are_clamped() {
        let pred = linear(1.0, 0.0).forward(&[1e4]).unwrap();
        assert_eq!(pred.probabilities[0], 1.0 - PROB_EPS);
        let pred = linear(1.0, 0.0).forward(&[-1e4]).unwrap();
        assert_eq!(pred.probabilities[0], PROB_EPS);
        let loss = bce_loss(&pred, &[1.0], None).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn bce_examples() {
        let half = Prediction {
            logits: vec![0.0],
            probabilities: vec![0.5],
        };
        assert_abs_diff_eq!(bce_loss(&half, &[1.0], None).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce_loss(&half, &[0.5], None).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let pred = Prediction {
            logits: vec![0.0, 0.0],
            probabilities: vec![0.9, 0.1],
        };
        let loss = bce_loss(&pred, &[1.0, 0.0], Some(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(loss, -(0.9f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(loss, 0.10536051565782628, epsilon = 1e-12);
        assert!(matches!(bce_loss(&half, &[1.5], None), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_vanishes_at_matching_continuous_target() {
        let arch = Architecture::new(3, vec![4], 2);
        let p = ModelParameters::init(&arch, 3).unwrap();
        let x = array![[0.3, -1.0, 2.0], [1.0, 0.5, -0.5]];
        let targets = p.predict_batch(x.view()).unwrap();
        let g = grad_loss(&p, &Batch::new(x, targets, None).unwrap()).unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hand_gradient_of_linear_unit() {
        let p = linear(0.0, 0.0);
        let batch = Batch::new(array![[1.0]], array![[1.0]], None).unwrap();
        let g = grad_loss(&p, &batch).unwrap();
        assert_eq!(g.values(), &[-0.5, -0.5]);
    }

    #[test]
    fn sgd_step_examples() {
        let p = linear(1.0, 0.0);
        let q = p.sgd_step(&FlatGradient::from_vec(vec![2.0, 0.0]), 0.1).unwrap();
        assert_abs_diff_eq!(q.to_flat()[0], 0.8, epsilon = 1e-15);
        assert_eq!(p.to_flat(), vec![1.0, 0.0]);
        assert_eq!(p.sgd_step(&FlatGradient::zeros(2), 0.1).unwrap(), p);
        assert!(matches!(p.sgd_step(&FlatGradient::zeros(3), 0.1), Err(Error::Shape { .. })));
    }

    #[test]
    fn tangent_of_linear_unit() {
        let p = linear(0.7, -0.2);
        assert_eq!(p.logit_tangent(&[2.0], &FlatGradient::from_vec(vec![3.0, 0.0])).unwrap(), vec![6.0]);
        assert_eq!(p.logit_tangent(&[2.0], &FlatGradient::zeros(2)).unwrap(), vec![0.0]);
        assert!(p.logit_tangent(&[2.0], &FlatGradient::zeros(5)).is_err());
    }

    #[test]
    fn flat_order_is_layer_major_weight_then_bias_row_major() {
        let arch = Architecture::new(2, vec![2], 1);
        let values: Vec<f64> = (0..arch.param_count()).map(|v| v as f64).collect();
        let p = ModelParameters::from_flat(&arch, &values).unwrap();
        assert_eq!(p.layers()[0].weight, array![[0.0, 1.0], [2.0, 3.0]]);
        assert_eq!(p.layers()[0].bias, array![4.0, 5.0]);
        assert_eq!(p.layers()[1].weight, array![[6.0, 7.0]]);
        assert_eq!(p.layers()[1].bias, array![8.0]);
        assert_eq!(p.to_flat(), values);
    }

    #[test]
    fn parameter_file_round_trip() {
        let arch = Architecture::new(3, vec![5, 4], 2).with_activation(Activation::Tanh);
        let p = ModelParameters::init(&arch, 11).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"RFLP1");
        let q = ModelParameters::read_from(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert!(ModelParameters::read_from(&buf[..20]).is_err());
    }
}
