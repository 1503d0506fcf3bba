//! Small feed-forward networks (dense, plain convolution, pointwise
//! activations) with mean loss, reverse-mode gradients and exact
//! Hessian-vector products.
//!
//! The per-example forward and backward passes are generic over [`Scalar`].
//! The gradient runs them on `f64`. The Hessian-vector product runs the same
//! reverse pass on [`Dual`] parameters `θ + ε·v`, whose tangent part is
//! `∇²ℒ(θ)·v`.
//!
//! Dataset means are reduced sequentially in example order so that results
//! are bit-reproducible.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSlice, LabelRef, Labels};
use crate::error::{Error, Result};
use crate::params::{LayerLayout, ParamVector};
use crate::scalar::{Dual, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy against class labels.
    CrossEntropy,
    /// `½‖output − target‖²` per example.
    MeanSquaredError,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = W x + b`, `W` stored row-major as `(outputs, inputs)`.
    Dense {
        name: String,
        inputs: usize,
        outputs: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// Valid (no padding), stride-1 2-D convolution on a `(channels, height,
    /// width)` input. Kernel stored as `(out, in, k, k)`.
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Activation {
        kind: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
}

impl NetworkSpec {
    /// Dense stack `input -> hidden[0] -> ... -> outputs` with `act` between
    /// layers. Layers are named `fc1`, `fc2`, ...
    pub fn mlp(input_dim: usize, hidden: &[usize], outputs: usize, act: Activation, loss: LossKind) -> Self {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LayerSpec::Dense {
                name: format!("fc{}", i + 1),
                inputs: width,
                outputs: h,
                bias: true,
            });
            layers.push(LayerSpec::Activation { kind: act });
            width = h;
        }
        layers.push(LayerSpec::Dense {
            name: format!("fc{}", hidden.len() + 1),
            inputs: width,
            outputs,
            bias: true,
        });
        Self {
            input_dim,
            layers,
            loss,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Dense {
        offset: usize,
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv {
        offset: usize,
        cin: usize,
        cout: usize,
        k: usize,
        h: usize,
        w: usize,
        bias: bool,
    },
    Act(Activation),
}

impl Op {
    fn out_dim(&self, in_dim: usize) -> usize {
        match *self {
            Op::Dense { outputs, .. } => outputs,
            Op::Conv { cout, k, h, w, .. } => cout * (h + 1 - k) * (w + 1 - k),
            Op::Act(_) => in_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layout: Arc<LayerLayout>,
    ops: Vec<Op>,
    output_dim: usize,
}

/// Reused per-example buffers.
struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_next: Vec<T>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::Config("network input_dim must be positive".into()));
        }
        let mut parts: Vec<(String, usize)> = Vec::new();
        let mut ops = Vec::new();
        let mut offset = 0;
        let mut width = spec.input_dim;
        for layer in &spec.layers {
            let op = match layer {
                LayerSpec::Dense {
                    name,
                    inputs,
                    outputs,
                    bias,
                } => {
                    if *inputs != width {
                        return Err(Error::Config(format!(
                            "layer `{name}` expects {inputs} inputs but receives {width}"
                        )));
                    }
                    if *outputs == 0 {
                        return Err(Error::Config(format!("layer `{name}` has no outputs")));
                    }
                    let len = inputs * outputs + if *bias { *outputs } else { 0 };
                    parts.push((name.clone(), len));
                    let op = Op::Dense {
                        offset,
                        inputs: *inputs,
                        outputs: *outputs,
                        bias: *bias,
                    };
                    offset += len;
                    op
                }
                LayerSpec::Conv2d {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    height,
                    width: w,
                    bias,
                } => {
                    if in_channels * height * w != width {
                        return Err(Error::Config(format!(
                            "layer `{name}` expects {}x{}x{} = {} inputs but receives {width}",
                            in_channels,
                            height,
                            w,
                            in_channels * height * w
                        )));
                    }
                    if *kernel == 0 || kernel > height || kernel > w || *out_channels == 0 {
                        return Err(Error::Config(format!(
                            "layer `{name}` has an invalid kernel/channel configuration"
                        )));
                    }
                    let len = out_channels * in_channels * kernel * kernel + if *bias { *out_channels } else { 0 };
                    parts.push((name.clone(), len));
                    let op = Op::Conv {
                        offset,
                        cin: *in_channels,
                        cout: *out_channels,
                        k: *kernel,
                        h: *height,
                        w: *w,
                        bias: *bias,
                    };
                    offset += len;
                    op
                }
                LayerSpec::Activation { kind } => Op::Act(*kind),
            };
            width = op.out_dim(width);
            ops.push(op);
        }
        if parts.is_empty() {
            return Err(Error::Config("network has no parametric layers".into()));
        }
        let layout = Arc::new(LayerLayout::from_lengths(parts)?);
        Ok(Self {
            spec,
            layout,
            ops,
            output_dim: width,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn loss_kind(&self) -> LossKind {
        self.spec.loss
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.layout.total_params()];
        for op in &self.ops {
            let (offset, len, fan_in) = match *op {
                Op::Dense {
                    offset,
                    inputs,
                    outputs,
                    bias,
                } => (offset, inputs * outputs + if bias { outputs } else { 0 }, inputs),
                Op::Conv {
                    offset,
                    cin,
                    cout,
                    k,
                    bias,
                    ..
                } => (offset, cout * cin * k * k + if bias { cout } else { 0 }, cin * k * k),
                Op::Act(_) => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[offset..offset + len] {
                *v = rng.random_range(-bound..bound);
            }
        }
        ParamVector::from_raw(values, self.layout.clone())
    }

    fn check(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<()> {
        theta.check_layout(&self.layout)?;
        if data.input_dim() != self.spec.input_dim {
            return Err(Error::Layout(format!(
                "data rows have width {} but the network takes {}",
                data.input_dim(),
                self.spec.input_dim
            )));
        }
        if data.labels().output_dim() != self.output_dim {
            return Err(Error::Layout(format!(
                "network emits {} outputs but labels have width {}",
                self.output_dim,
                data.labels().output_dim()
            )));
        }
        match (self.spec.loss, data.labels()) {
            (LossKind::CrossEntropy, Labels::Classes { .. }) | (LossKind::MeanSquaredError, Labels::Targets { .. }) => {
                Ok(())
            }
            _ => Err(Error::Layout(
                "loss kind does not match the label type of the data".into(),
            )),
        }
    }

    fn workspace<T: Scalar>(&self) -> Workspace<T> {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut width = self.spec.input_dim;
        acts.push(vec![T::zero(); width]);
        for op in &self.ops {
            width = op.out_dim(width);
            acts.push(vec![T::zero(); width]);
        }
        let widest = acts.iter().map(Vec::len).max().unwrap_or(0);
        Workspace {
            acts,
            delta: Vec::with_capacity(widest),
            delta_next: Vec::with_capacity(widest),
        }
    }

    fn forward<T: Scalar>(&self, params: &[T], x: &[f64], ws: &mut Workspace<T>) {
        for (a, &xi) in ws.acts[0].iter_mut().zip(x) {
            *a = T::constant(xi);
        }
        for (i, op) in self.ops.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            match *op {
                Op::Dense {
                    offset,
                    inputs,
                    outputs,
                    bias,
                } => {
                    let w = &params[offset..offset + inputs * outputs];
                    for o in 0..outputs {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        let mut acc = if bias {
                            params[offset + inputs * outputs + o]
                        } else {
                            T::zero()
                        };
                        for (wi, xi) in row.iter().zip(input) {
                            acc += *wi * *xi;
                        }
                        out[o] = acc;
                    }
                }
                Op::Conv {
                    offset,
                    cin,
                    cout,
                    k,
                    h,
                    w,
                    bias,
                } => {
                    let (oh, ow) = (h + 1 - k, w + 1 - k);
                    let kernel_len = cout * cin * k * k;
                    for co in 0..cout {
                        let b = if bias {
                            params[offset + kernel_len + co]
                        } else {
                            T::zero()
                        };
                        for y in 0..oh {
                            for x in 0..ow {
                                let mut acc = b;
                                for ci in 0..cin {
                                    for ky in 0..k {
                                        let wrow = offset + ((co * cin + ci) * k + ky) * k;
                                        let irow = (ci * h + y + ky) * w + x;
                                        for kx in 0..k {
                                            acc += params[wrow + kx] * input[irow + kx];
                                        }
                                    }
                                }
                                out[(co * oh + y) * ow + x] = acc;
                            }
                        }
                    }
                }
                Op::Act(kind) => {
                    for (o, &z) in out.iter_mut().zip(input.iter()) {
                        *o = match kind {
                            Activation::Identity => z,
                            Activation::Tanh => z.tanh(),
                            Activation::Relu => z.relu(),
                            Activation::Sigmoid => z.sigmoid(),
                        };
                    }
                }
            }
        }
    }

    /// Loss of the last forward pass; writes `dℒ/d(output)` into `ws.delta`.
    fn head<T: Scalar>(&self, label: LabelRef<'_>, ws: &mut Workspace<T>, want_delta: bool) -> T {
        let out = ws.acts.last().expect("at least the input activation");
        ws.delta.clear();
        match (self.spec.loss, label) {
            (LossKind::CrossEntropy, LabelRef::Class(c)) => {
                let shift = out.iter().map(|z| z.value()).fold(f64::NEG_INFINITY, f64::max);
                let shift = if shift.is_finite() { shift } else { 0.0 };
                let exps: Vec<T> = out.iter().map(|&z| (z - T::constant(shift)).exp()).collect();
                let mut total = T::zero();
                for &e in &exps {
                    total += e;
                }
                let lse = total.ln() + T::constant(shift);
                if want_delta {
                    ws.delta.extend(exps.iter().enumerate().map(|(j, &e)| {
                        let p = e / total;
                        if j == c {
                            p - T::constant(1.0)
                        } else {
                            p
                        }
                    }));
                }
                lse - out[c]
            }
            (LossKind::MeanSquaredError, LabelRef::Target(t)) => {
                let mut acc = T::zero();
                for (&z, &ti) in out.iter().zip(t) {
                    let r = z - T::constant(ti);
                    acc += r * r;
                    if want_delta {
                        ws.delta.push(r);
                    }
                }
                acc.scale(0.5)
            }
            _ => unreachable!("label kind checked against loss kind"),
        }
    }

    /// Accumulates this example's parameter gradient into `grad`.
    fn backward<T: Scalar>(&self, params: &[T], grad: &mut [T], ws: &mut Workspace<T>) {
        for (i, op) in self.ops.iter().enumerate().rev() {
            let input = &ws.acts[i];
            let need_input_grad = i > 0;
            ws.delta_next.clear();
            match *op {
                Op::Dense {
                    offset,
                    inputs,
                    outputs,
                    bias,
                } => {
                    if need_input_grad {
                        ws.delta_next.resize(inputs, T::zero());
                    }
                    for o in 0..outputs {
                        let d = ws.delta[o];
                        let base = offset + o * inputs;
                        for j in 0..inputs {
                            grad[base + j] += d * input[j];
                        }
                        if bias {
                            grad[offset + inputs * outputs + o] += d;
                        }
                        if need_input_grad {
                            let row = &params[base..base + inputs];
                            for (dn, &wj) in ws.delta_next.iter_mut().zip(row) {
                                *dn += wj * d;
                            }
                        }
                    }
                }
                Op::Conv {
                    offset,
                    cin,
                    cout,
                    k,
                    h,
                    w,
                    bias,
                } => {
                    let (oh, ow) = (h + 1 - k, w + 1 - k);
                    let kernel_len = cout * cin * k * k;
                    if need_input_grad {
                        ws.delta_next.resize(cin * h * w, T::zero());
                    }
                    for co in 0..cout {
                        for y in 0..oh {
                            for x in 0..ow {
                                let d = ws.delta[(co * oh + y) * ow + x];
                                if bias {
                                    grad[offset + kernel_len + co] += d;
                                }
                                for ci in 0..cin {
                                    for ky in 0..k {
                                        let wrow = offset + ((co * cin + ci) * k + ky) * k;
                                        let irow = (ci * h + y + ky) * w + x;
                                        for kx in 0..k {
                                            grad[wrow + kx] += d * input[irow + kx];
                                            if need_input_grad {
                                                ws.delta_next[irow + kx] += params[wrow + kx] * d;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Act(kind) => {
                    let output = &ws.acts[i + 1];
                    ws.delta_next.extend(ws.delta.iter().zip(input.iter().zip(output)).map(
                        |(&d, (&z, &y))| match kind {
                            Activation::Identity => d,
                            Activation::Tanh => d * (T::constant(1.0) - y * y),
                            Activation::Sigmoid => d * y * (T::constant(1.0) - y),
                            Activation::Relu => {
                                if z.value() > 0.0 {
                                    d
                                } else {
                                    T::zero()
                                }
                            }
                        },
                    ));
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
    }

    /// Sum of per-example losses over `rows` (in the order given), and
    /// optionally the summed gradient accumulated into `grad`.
    fn accumulate<T: Scalar>(
        &self,
        params: &[T],
        data: &DatasetSlice,
        rows: impl Iterator<Item = usize>,
        mut grad: Option<&mut [T]>,
    ) -> Result<T> {
        let mut ws = self.workspace::<T>();
        let mut total = T::zero();
        for i in rows {
            self.forward(params, data.input(i), &mut ws);
            if ws.acts.last().expect("output").iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation {
                    example: i,
                    what: "network output",
                });
            }
            let loss = self.head(data.label(i), &mut ws, grad.is_some());
            if !loss.is_finite() {
                return Err(Error::NonFiniteActivation {
                    example: i,
                    what: "example loss",
                });
            }
            total += loss;
            if let Some(g) = grad.as_deref_mut() {
                self.backward(params, g, &mut ws);
            }
        }
        Ok(total)
    }

    /// Mean loss over the whole slice.
    pub fn loss(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<f64> {
        self.check(theta, data)?;
        let sum = self.accumulate(theta.values(), data, 0..data.len(), None)?;
        Ok(sum / data.len() as f64)
    }

    pub fn loss_and_gradient(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<(f64, ParamVector)> {
        self.check(theta, data)?;
        let mut grad = vec![0.0; theta.len()];
        let rows: Vec<usize> = (0..data.len()).collect();
        let loss = self.batch_into(theta.values(), data, &rows, &mut grad)?;
        Ok((loss, ParamVector::from_raw(grad, self.layout.clone())))
    }

    pub fn gradient(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<ParamVector> {
        self.loss_and_gradient(theta, data).map(|(_, g)| g)
    }

    /// Mean loss and mean gradient over `rows`, written into `grad`
    /// (overwritten). Used by the trainer on minibatches.
    pub(crate) fn batch_into(
        &self,
        params: &[f64],
        data: &DatasetSlice,
        rows: &[usize],
        grad: &mut [f64],
    ) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let sum = self.accumulate(params, data, rows.iter().copied(), Some(grad))?;
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(sum * inv)
    }

    pub(crate) fn check_training_inputs(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<()> {
        self.check(theta, data)
    }

    /// Exact `∇²ℒ(θ)·v`, by forward-mode differentiation of the reverse pass.
    pub fn hvp(&self, theta: &ParamVector, v: &ParamVector, data: &DatasetSlice) -> Result<ParamVector> {
        self.check(theta, data)?;
        v.check_layout(&self.layout)?;
        let params: Vec<Dual> = theta
            .values()
            .iter()
            .zip(v.values())
            .map(|(&t, &d)| Dual::new(t, d))
            .collect();
        let mut grad = vec![Dual::default(); params.len()];
        self.accumulate(&params, data, 0..data.len(), Some(&mut grad))?;
        let inv = 1.0 / data.len() as f64;
        let out = grad.iter().map(|g| g.eps * inv).collect();
        Ok(ParamVector::from_raw(out, self.layout.clone()))
    }

    /// `uᵀ ∇²ℒ(θ) v` from one Hessian-vector product.
    pub fn quadratic_form(
        &self,
        theta: &ParamVector,
        u: &ParamVector,
        v: &ParamVector,
        data: &DatasetSlice,
    ) -> Result<f64> {
        u.check_layout(&self.layout)?;
        Ok(u.dot(&self.hvp(theta, v, data)?))
    }

    /// Network outputs for one input row.
    pub fn predict(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        theta.check_layout(&self.layout)?;
        if x.len() != self.spec.input_dim {
            return Err(Error::Layout(format!(
                "input has width {} but the network takes {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        let mut ws = self.workspace::<f64>();
        self.forward(theta.values(), x, &mut ws);
        Ok(ws.acts.pop().expect("output"))
    }

    /// Fraction of rows whose argmax output (lowest index on ties) differs
    /// from the label.
    pub fn error_rate(&self, theta: &ParamVector, data: &DatasetSlice) -> Result<f64> {
        if self.spec.loss != LossKind::CrossEntropy {
            return Err(Error::UnsupportedMetric("error_rate"));
        }
        self.check(theta, data)?;
        let mut ws = self.workspace::<f64>();
        let mut wrong = 0usize;
        for i in 0..data.len() {
            self.forward(theta.values(), data.input(i), &mut ws);
            let out = ws.acts.last().expect("output");
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation {
                    example: i,
                    what: "network output",
                });
            }
            let LabelRef::Class(c) = data.label(i) else {
                unreachable!("checked above")
            };
            if argmax(out) != c {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.len() as f64)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(inputs: usize, outputs: usize, bias: bool, loss: LossKind) -> Network {
        Network::new(NetworkSpec {
            input_dim: inputs,
            layers: vec![LayerSpec::Dense {
                name: "w".into(),
                inputs,
                outputs,
                bias,
            }],
            loss,
        })
        .unwrap()
    }

    fn targets(inputs: Vec<f64>, input_dim: usize, values: Vec<f64>, dim: usize) -> DatasetSlice {
        DatasetSlice::new(inputs, input_dim, Labels::Targets { values, dim }).unwrap()
    }

    #[test]
    fn zero_weight_linear_has_zero_loss() {
        let net = linear(3, 2, true, LossKind::MeanSquaredError);
        let data = targets(vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0], 3, vec![0.0; 4], 2);
        let theta = ParamVector::zeros(net.layout().clone());
        assert_eq!(net.loss(&theta, &data).unwrap(), 0.0);
    }

    #[test]
    fn single_neuron_mse() {
        let net = linear(1, 1, false, LossKind::MeanSquaredError);
        let data = targets(vec![2.0], 1, vec![0.0], 1);
        let theta = ParamVector::new(vec![1.0], net.layout().clone()).unwrap();
        assert_eq!(net.loss(&theta, &data).unwrap(), 2.0);
    }

    #[test]
    fn half_squared_norm_gradient_and_hvp() {
        // one row x = 1, target 0, no bias: loss = ½(w1² + w2²)
        let net = linear(1, 2, false, LossKind::MeanSquaredError);
        let data = targets(vec![1.0], 1, vec![0.0, 0.0], 2);
        let theta = ParamVector::new(vec![1.0, -2.0], net.layout().clone()).unwrap();
        assert_eq!(net.gradient(&theta, &data).unwrap().values(), &[1.0, -2.0]);
        let v = ParamVector::new(vec![3.0, 5.0], net.layout().clone()).unwrap();
        assert_eq!(net.hvp(&theta, &v, &data).unwrap().values(), &[3.0, 5.0]);
        let zero = ParamVector::zeros(net.layout().clone());
        assert_eq!(net.hvp(&theta, &zero, &data).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn error_rate_examples() {
        // identity-like classifier: output = input
        let net = linear(3, 3, false, LossKind::CrossEntropy);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let theta = ParamVector::new(eye, net.layout().clone()).unwrap();
        let rows: Vec<f64> = (0..10)
            .flat_map(|i| {
                let mut r = vec![0.0; 3];
                r[i % 3] = 1.0;
                r
            })
            .collect();
        let right: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let mk = |labels: Vec<usize>| {
            DatasetSlice::new(rows.clone(), 3, Labels::Classes { labels, num_classes: 3 }).unwrap()
        };
        assert_eq!(net.error_rate(&theta, &mk(right.clone())).unwrap(), 0.0);
        let wrong: Vec<usize> = right.iter().map(|c| (c + 1) % 3).collect();
        assert_eq!(net.error_rate(&theta, &mk(wrong)).unwrap(), 1.0);
        let mut three_off = right.clone();
        for i in [1, 4, 8] {
            three_off[i] = (three_off[i] + 2) % 3;
        }
        assert_eq!(net.error_rate(&theta, &mk(three_off)).unwrap(), 0.3);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn error_rate_rejects_regression() {
        let net = linear(1, 1, false, LossKind::MeanSquaredError);
        let data = targets(vec![1.0], 1, vec![0.0], 1);
        let theta = ParamVector::zeros(net.layout().clone());
        assert!(matches!(
            net.error_rate(&theta, &data),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let net = linear(1, 2, false, LossKind::MeanSquaredError);
        let other = linear(1, 3, false, LossKind::MeanSquaredError);
        let data = targets(vec![1.0], 1, vec![0.0, 0.0], 2);
        let theta = ParamVector::zeros(other.layout().clone());
        assert!(matches!(net.loss(&theta, &data), Err(Error::Layout(_))));
    }

    #[test]
    fn non_finite_activation_names_example() {
        let net = linear(1, 1, false, LossKind::MeanSquaredError);
        let data = targets(vec![1.0, 1e300], 1, vec![0.0, 0.0], 1);
        let theta = ParamVector::new(vec![1e10], net.layout().clone()).unwrap();
        match net.loss(&theta, &data) {
            Err(Error::NonFiniteActivation { example, .. }) => assert_eq!(example, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv_layout_and_shape() {
        let net = Network::new(NetworkSpec {
            input_dim: 2 * 4 * 4,
            layers: vec![
                LayerSpec::Conv2d {
                    name: "conv1".into(),
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    height: 4,
                    width: 4,
                    bias: true,
                },
                LayerSpec::Activation { kind: Activation::Relu },
                LayerSpec::Dense {
                    name: "fc".into(),
                    inputs: 12,
                    outputs: 2,
                    bias: true,
                },
            ],
            loss: LossKind::CrossEntropy,
        })
        .unwrap();
        assert_eq!(net.layout().total_params(), 3 * 2 * 9 + 3 + 24 + 2);
        assert_eq!(net.output_dim(), 2);
        let theta = net.init_params(1);
        assert_eq!(net.predict(&theta, &[0.1; 32]).unwrap().len(), 2);
    }

    #[test]
    fn mismatched_layer_widths_rejected() {
        let spec = NetworkSpec {
            input_dim: 3,
            layers: vec![LayerSpec::Dense {
                name: "a".into(),
                inputs: 2,
                outputs: 1,
                bias: true,
            }],
            loss: LossKind::MeanSquaredError,
        };
        assert!(matches!(Network::new(spec), Err(Error::Config(_))));
    }
}
