//! Dense feed-forward networks with hand-written backpropagation, Adam and
//! soft target updates. Generic over the floating point type; products go
//! through ndarray so `f32`/`f64` hit the blocked matrix kernels.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    Linear,
}

/// One affine layer. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// ReLU between layers, `head` on the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<Dense<T>>,
    head: Head,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Input to every layer; entry 0 is the network input.
    inputs: Vec<Array2<T>>,
    output: Array2<T>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn from_layers(layers: Vec<Dense<T>>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("at least one layer", "none"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(
                    format!("layer {} input {}", i + 1, pair[0].outputs()),
                    pair[1].inputs(),
                ));
            }
        }
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| l.bias.len() != l.outputs()) {
            return Err(Error::shape(format!("layer {i} bias {}", l.outputs()), l.bias.len()));
        }
        Ok(Self { layers, head })
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape("at least two layer sizes", sizes.len()));
        }
        Self::from_layers(sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(), head)
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            layer.weight.mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
            layer.bias.mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        Ok(())
    }

    /// Pre-head outputs for a batch (one sample per row).
    pub fn logits_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut h = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = affine(layer, h.view());
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let mut z = self.logits_batch(x)?;
        apply_head(self.head, &mut z);
        Ok(z)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn logits(&self, input: &[T]) -> Result<Vec<T>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.logits_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_trace(&self, x: ArrayView2<T>) -> Result<Trace<T>> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            let next = affine(layer, h.view());
            inputs.push(h);
            h = next;
        }
        apply_head(self.head, &mut h);
        Ok(Trace { inputs, output: h })
    }

    /// Gradients of `sum_b output[b] . upstream[b]` with respect to every
    /// parameter, and with respect to the input rows.
    pub fn backward_trace(&self, trace: &Trace<T>, upstream: ArrayView2<T>) -> Result<(Gradients<T>, Array2<T>)> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::shape(format!("{:?} upstream", trace.output.dim()), format!("{:?}", upstream.dim())));
        }
        let mut dz = match self.head {
            Head::Linear => upstream.to_owned(),
            Head::Softmax => {
                // dz = y * (g - <g, y>)
                let y = &trace.output;
                let dot = (&upstream * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                y * &(&upstream - &dot)
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut input_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.inputs[i];
            let weight = dz.t().dot(a);
            let bias = dz.sum_axis(Axis(0));
            let mut da = dz.dot(&layer.weight);
            grads.push(Dense { weight, bias });
            if i == 0 {
                input_grad = Some(da);
            } else {
                Zip::from(&mut da).and(a).for_each(|d, &act| {
                    if act <= T::zero() {
                        *d = T::zero();
                    }
                });
                dz = da;
            }
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad.unwrap()))
    }

    /// Single-sample backward pass.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let trace = self.forward_trace(x)?;
        let g = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row view");
        let (grads, dx) = self.backward_trace(&trace, g)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    /// Parameters in row-major order, layer by layer: weights then biases.
    pub fn to_flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!("{} parameters", self.param_count()), flat.len()));
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            layer.weight.iter_mut().chain(layer.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    fn same_shape(&self, other_layers: &[Dense<T>]) -> bool {
        self.layers.len() == other_layers.len()
            && self
                .layers
                .iter()
                .zip(other_layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }
}

fn affine<T: Scalar>(layer: &Dense<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

fn relu_inplace<T: Scalar>(h: &mut Array2<T>) {
    h.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

fn apply_head<T: Scalar>(head: Head, z: &mut Array2<T>) {
    if head == Head::Softmax {
        for mut row in z.rows_mut() {
            softmax_inplace(row.as_slice_mut().expect("contiguous row"));
        }
    }
}

/// Max-shifted softmax.
pub fn softmax_inplace<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }

    /// Squared L2 norm across all parameters.
    pub fn norm_sq(&self) -> T {
        self.layers.iter().fold(T::zero(), |acc, l| {
            acc + l.weight.iter().chain(l.bias.iter()).fold(T::zero(), |a, &g| a + g * g)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|g| g.is_finite()))
    }
}

/// First/second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    m: Gradients<T>,
    v: Gradients<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNet<T>) -> Self {
        Self {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, descending along `grads`.
pub fn adam_step<T: Scalar>(net: &mut DenseNet<T>, grads: &Gradients<T>, state: &mut AdamState<T>, lr: T) -> Result<()> {
    if !net.same_shape(&grads.layers) || !net.same_shape(&state.m.layers) {
        return Err(Error::shape("gradients shaped like the network", "mismatched layers"));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let update = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (T::one() - b1) * *g;
        *v = b2 * *v + (T::one() - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}

/// `target <- (1 - tau) * target + tau * source`.
pub fn soft_update<T: Scalar>(target: &mut DenseNet<T>, source: &DenseNet<T>, tau: T) -> Result<()> {
    if !target.same_shape(&source.layers) || target.head != source.head {
        return Err(Error::shape(format!("{:?}", target.sizes()), format!("{:?}", source.sizes())));
    }
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Domain(format!("tau {tau} outside [0, 1]")));
    }
    let keep = T::one() - tau;
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        Zip::from(&mut t.weight).and(&s.weight).for_each(|a, &b| *a = keep * *a + tau * b);
        Zip::from(&mut t.bias).and(&s.bias).for_each(|a, &b| *a = keep * *a + tau * b);
    }
    Ok(())
}

const CHECKPOINT_FORMAT: &str = "persona-advisor/dense-net";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network: topology header plus row-major parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub sizes: Vec<usize>,
    pub head: Head,
    pub seed: Option<u64>,
    pub params: Vec<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn of(net: &DenseNet<T>, seed: Option<u64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.into(),
            sizes: net.sizes(),
            head: net.head(),
            seed,
            params: net.to_flat(),
        }
    }

    pub fn into_net(self) -> std::result::Result<DenseNet<T>, String> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(format!("unexpected format `{}`", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.scalar != T::NAME {
            return Err(format!("stored as {}, loading as {}", self.scalar, T::NAME));
        }
        let mut net = DenseNet::zeros(&self.sizes, self.head).map_err(|e| e.to_string())?;
        net.set_flat(&self.params).map_err(|e| e.to_string())?;
        Ok(net)
    }
}

pub fn save_checkpoint<T: Scalar>(net: &DenseNet<T>, seed: Option<u64>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::of(net, seed)).map_err(|e| Error::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a network, rejecting it unless its topology matches `expect` when given.
pub fn load_checkpoint<T: Scalar>(path: &Path, expect: Option<(&[usize], Head)>) -> Result<DenseNet<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |message: String| Error::Checkpoint {
        path: path.into(),
        message,
    };
    let ckpt: Checkpoint<T> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if let Some((sizes, head)) = expect {
        if ckpt.sizes != sizes || ckpt.head != head {
            return Err(err(format!(
                "topology {:?}/{:?} does not match expected {:?}/{:?}",
                ckpt.sizes, ckpt.head, sizes, head
            )));
        }
    }
    ckpt.into_net().map_err(err)
}

/// Mean of each output over the batch rows.
pub fn column_means<T: Scalar>(m: &Array2<T>) -> Array1<T> {
    let n = T::from_usize(m.nrows()).unwrap();
    m.sum_axis(Axis(0)).mapv(|v| v / n)
}

/// Columns `from..` of a batch gradient, e.g. the action part of a critic input.
pub fn tail_columns<T: Scalar>(m: &Array2<T>, from: usize) -> Array2<T> {
    m.slice(s![.., from..]).to_owned()
}
