//! Forward and backward passes of the regressor, generic over `f32`/`f64`.
//!
//! Activations are channel-major (`[c][h][w]`) and samples are processed
//! one at a time.

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::act::{self, selu, selu_bias_in_place, selu_grad_from_output};
use super::conv::{conv_forward, conv_input_grad, conv_weight_grad, ConvScratch};
use super::spec::{LayerKind, ModelSpec, ParamAudit, Shape, LAYER_COUNT};
use super::LocnetError;
use crate::tensorize::{LabeledSample, TENSOR_LEN};

pub trait Real: Float + Default + Debug + Send + Sync + AddAssign + 'static {
    fn lit(v: f64) -> Self {
        Self::from(v).unwrap()
    }

    /// `v[i] = selu(v[i] + bias)`.
    fn selu_bias_slice(v: &mut [Self], bias: Self) {
        act::selu_bias_scalar(v, bias)
    }
}

impl Real for f32 {
    fn selu_bias_slice(v: &mut [f32], bias: f32) {
        act::selu_bias_f32(v, bias)
    }
}

impl Real for f64 {}

/// `C (m×n) = op(A) (m×k) · op(B) (k×n) + beta·C`, all dense row-major.
/// `a_t` means `A` is stored as `k×m`, `b_t` that `B` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
fn matmul<F: Real>(m: usize, k: usize, n: usize, a: &[F], a_t: bool, b: &[F], b_t: bool, c: &mut [F], beta: F) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            beta != F::zero(),
            a.as_ptr(),
            csa,
            rsa,
            b.as_ptr(),
            csb,
            rsb,
            beta,
            F::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv {
        input: Shape,
        cout: usize,
        kh: usize,
        kw: usize,
    },
    Pool {
        input: Shape,
        output: Shape,
        kh: usize,
        kw: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        units: usize,
        selu: bool,
    },
}

impl Op {
    fn from_spec(spec: &ModelSpec) -> Vec<Op> {
        let inputs = spec.input_shapes();
        let outputs = spec.output_shapes();
        spec.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let [kh, kw] = l.kernel.unwrap_or([1, 1]);
                match l.kind {
                    LayerKind::Conv => Op::Conv {
                        input: inputs[i],
                        cout: l.units,
                        kh,
                        kw,
                    },
                    LayerKind::Pool => Op::Pool {
                        input: inputs[i],
                        output: outputs[i],
                        kh,
                        kw,
                    },
                    LayerKind::Flatten => Op::Flatten,
                    LayerKind::Dense => Op::Dense {
                        inputs: inputs[i].len(),
                        units: l.units,
                        selu: i + 1 < LAYER_COUNT,
                    },
                }
            })
            .collect()
    }
}

/// Weights `[out][fan_in]` (conv fan-in ordered `[cin][kh][kw]`) and biases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> LayerParams<F> {
    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
        }
    }

    fn fill_zero(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = F::zero());
        self.bias.iter_mut().for_each(|v| *v = F::zero());
    }
}

/// Parameter shapes `(weight, bias)` of every layer.
pub fn param_shapes(spec: &ModelSpec) -> Vec<(Vec<usize>, usize)> {
    spec.layers
        .iter()
        .zip(spec.input_shapes())
        .map(|(l, input)| match l.kind {
            LayerKind::Conv => {
                let [kh, kw] = l.kernel.unwrap_or([1, 1]);
                (vec![l.units, input.c, kh, kw], l.units)
            }
            LayerKind::Dense => (vec![l.units, input.len()], l.units),
            LayerKind::Pool | LayerKind::Flatten => (vec![], 0),
        })
        .collect()
}

/// Fresh selu-friendly initialization of one layer: weights ~ N(0, 1/fan_in),
/// zero bias. Each layer draws from its own stream of `seed`, so re-initializing
/// a layer reproduces what a fresh build with the same seed would give.
pub fn init_layer<F: Real>(spec: &ModelSpec, layer: usize, seed: u64) -> LayerParams<F> {
    let (wshape, nbias) = &param_shapes(spec)[layer];
    if wshape.is_empty() {
        return LayerParams::default();
    }
    let fan_in: usize = wshape[1..].iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64 + 1);
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
    let count: usize = wshape.iter().product();
    LayerParams {
        weight: (0..count).map(|_| F::lit(normal.sample(&mut rng))).collect(),
        bias: vec![F::zero(); *nbias],
    }
}

/// A set of network inputs (or cached intermediate features) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<F> {
    pub shape: Shape,
    pub data: Vec<F>,
    pub labels: Vec<[F; 2]>,
}

impl<F: Real> TensorSet<F> {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Channel-major network inputs from normalized samples.
    pub fn from_samples(samples: &[LabeledSample], input: Shape) -> Self {
        assert_eq!(input.len(), TENSOR_LEN);
        let mut set = Self::new(input);
        set.data.reserve(samples.len() * TENSOR_LEN);
        for s in samples {
            set.data
                .extend(s.tensor.to_channel_major().into_iter().map(|v| F::lit(v as f64)));
            set.labels.push([F::lit(s.label[0] as f64), F::lit(s.label[1] as f64)]);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[F] {
        let n = self.shape.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, values: &[F], label: [F; 2]) {
        assert_eq!(values.len(), self.shape.len());
        self.data.extend_from_slice(values);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.shape);
        out.data.reserve(indices.len() * self.shape.len());
        for &i in indices {
            out.push(self.sample(i), self.labels[i]);
        }
        out
    }

    /// Concatenates sets of the same shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TensorSet<F>>) -> Option<Self> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?.clone();
        for p in iter {
            if p.shape != out.shape {
                return None;
            }
            out.data.extend_from_slice(&p.data);
            out.labels.extend_from_slice(&p.labels);
        }
        Some(out)
    }
}

/// Per-sample scratch buffers: the output of every layer plus convolution
/// scratch.
#[derive(Debug, Default)]
pub struct Workspace<F> {
    acts: Vec<Vec<F>>,
    pool_argmax: Vec<u32>,
    conv: ConvScratch<F>,
    grad: Vec<F>,
    grad_next: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    spec: ModelSpec,
    ops: Vec<Op>,
    pub(crate) params: Vec<LayerParams<F>>,
}

impl<F: Real> Model<F> {
    /// Validates the spec and its parameter budget, then initializes every layer.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, LocnetError> {
        spec.validate()?;
        spec.check_budget()?;
        let params = (0..LAYER_COUNT).map(|l| init_layer(&spec, l, seed)).collect();
        Ok(Self {
            ops: Op::from_spec(&spec),
            spec,
            params,
        })
    }

    /// Assembles a model from existing parameters, checking every shape.
    pub fn from_parts(spec: ModelSpec, params: Vec<LayerParams<F>>) -> Result<Self, LocnetError> {
        spec.validate()?;
        let shapes = param_shapes(&spec);
        if params.len() != shapes.len() {
            return Err(LocnetError::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                shapes.len()
            )));
        }
        for (i, (p, (w, b))) in params.iter().zip(&shapes).enumerate() {
            let wlen: usize = if w.is_empty() { 0 } else { w.iter().product() };
            if p.weight.len() != wlen || p.bias.len() != *b {
                return Err(LocnetError::Shape(format!(
                    "layer {}: weight {} / bias {}, expected {wlen} / {b}",
                    i + 1,
                    p.weight.len(),
                    p.bias.len()
                )));
            }
        }
        Ok(Self {
            ops: Op::from_spec(&spec),
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams<F>] {
        &self.params
    }

    pub fn param_audit(&self) -> ParamAudit {
        self.spec.param_audit()
    }

    pub fn trainable_params(&self) -> usize {
        self.spec.trainable_params()
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.spec.layers[layer].frozen = frozen;
    }

    /// Re-draws the parameters of the given 0-based layers.
    pub fn reinit_layers(&mut self, layers: impl IntoIterator<Item = usize>, seed: u64) {
        for l in layers {
            self.params[l] = init_layer(&self.spec, l, seed);
        }
    }

    /// Converts the parameters to another float type.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            spec: self.spec.clone(),
            ops: self.ops.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    weight: p.weight.iter().map(|v| G::from(*v).unwrap()).collect(),
                    bias: p.bias.iter().map(|v| G::from(*v).unwrap()).collect(),
                })
                .collect(),
        }
    }

    /// Shape of the activation feeding 0-based layer `start`.
    pub fn shape_before(&self, start: usize) -> Shape {
        if start == 0 {
            self.spec.input()
        } else {
            self.spec.output_shapes()[start - 1]
        }
    }

    pub fn zero_grads(&self) -> Vec<LayerParams<F>> {
        self.params.iter().map(LayerParams::zeros_like).collect()
    }

    /// Runs layers `start..28` on `input` (the activation entering layer
    /// `start`) and returns the `(x, y)` prediction.
    pub fn forward(&self, input: &[F], start: usize, ws: &mut Workspace<F>) -> [F; 2] {
        assert_eq!(
            input.len(),
            self.shape_before(start).len(),
            "input does not match layer {start}"
        );
        if ws.acts.len() != LAYER_COUNT + 1 {
            ws.acts = vec![Vec::new(); LAYER_COUNT + 1];
        }
        ws.acts[start].clear();
        ws.acts[start].extend_from_slice(input);
        for l in start..LAYER_COUNT {
            self.forward_layer(l, ws);
        }
        let out = &ws.acts[LAYER_COUNT];
        [out[0], out[1]]
    }

    /// Output of layer `end` (1-based count of layers run) for one input.
    pub fn forward_prefix(&self, input: &[F], end: usize, ws: &mut Workspace<F>) -> Vec<F> {
        if ws.acts.len() != LAYER_COUNT + 1 {
            ws.acts = vec![Vec::new(); LAYER_COUNT + 1];
        }
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(input);
        for l in 0..end {
            self.forward_layer(l, ws);
        }
        ws.acts[end].clone()
    }

    /// Activations after the first `k` layers for every sample of `set`.
    pub fn features(&self, set: &TensorSet<F>, k: usize) -> TensorSet<F> {
        if k == 0 {
            return set.clone();
        }
        let mut ws = Workspace::default();
        let mut out = TensorSet::new(self.shape_before(k));
        out.data.reserve(set.len() * out.shape.len());
        for i in 0..set.len() {
            let f = self.forward_prefix(set.sample(i), k, &mut ws);
            out.push(&f, set.labels[i]);
        }
        out
    }

    pub fn predict(&self, input: &[F], ws: &mut Workspace<F>) -> [F; 2] {
        self.forward(input, 0, ws)
    }

    fn forward_layer(&self, l: usize, ws: &mut Workspace<F>) {
        let (lower, upper) = ws.acts.split_at_mut(l + 1);
        let x = &lower[l];
        let y = &mut upper[0];
        let p = &self.params[l];
        match self.ops[l] {
            Op::Conv { input, cout, kh, kw } => {
                let hw = input.h * input.w;
                conv_forward(x, input, &p.weight, cout, kh, kw, y, &mut ws.conv);
                for (row, b) in y.chunks_exact_mut(hw).zip(&p.bias) {
                    selu_bias_in_place(row, *b);
                }
            }
            Op::Pool { input, output, kh, kw } => {
                y.resize(output.len(), F::zero());
                if l == super::spec::POOL_LAYER - 1 {
                    ws.pool_argmax.resize(output.len(), 0);
                }
                max_pool(x, input, output, kh, kw, y, &mut ws.pool_argmax);
            }
            Op::Flatten => {
                y.clear();
                y.extend_from_slice(x);
            }
            Op::Dense {
                inputs,
                units,
                selu: act,
            } => {
                y.resize(units, F::zero());
                matmul(units, inputs, 1, &p.weight, false, x, false, y, F::zero());
                for (v, b) in y.iter_mut().zip(&p.bias) {
                    *v += *b;
                    if act {
                        *v = selu(*v);
                    }
                }
            }
        }
    }

    /// Back-propagates `dout` (gradient of the loss w.r.t. the prediction)
    /// through the activations left in `ws` by the last [`Model::forward`],
    /// adding parameter gradients of unfrozen layers into `grads`. Layers
    /// below `stop` are not visited.
    pub fn backward(&self, dout: [F; 2], stop: usize, ws: &mut Workspace<F>, grads: &mut [LayerParams<F>]) {
        ws.grad.clear();
        ws.grad.extend_from_slice(&dout);
        for l in (stop..LAYER_COUNT).rev() {
            let need_dx = l > stop;
            let trainable = !self.spec.layers[l].frozen;
            let x = &ws.acts[l];
            let y = &ws.acts[l + 1];
            let p = &self.params[l];
            match self.ops[l] {
                Op::Conv { input, cout, kh, kw } => {
                    let hw = input.h * input.w;
                    for (g, v) in ws.grad.iter_mut().zip(y) {
                        *g = *g * selu_grad_from_output(*v);
                    }
                    if trainable {
                        let gp = &mut grads[l];
                        conv_weight_grad(x, input, &ws.grad, cout, kh, kw, &mut gp.weight, &mut ws.conv);
                        for (b, row) in gp.bias.iter_mut().zip(ws.grad.chunks_exact(hw)) {
                            *b += row.iter().fold(F::zero(), |acc, v| acc + *v);
                        }
                    }
                    if need_dx {
                        conv_input_grad(
                            &ws.grad,
                            input,
                            &p.weight,
                            cout,
                            kh,
                            kw,
                            &mut ws.grad_next,
                            &mut ws.conv,
                        );
                    }
                }
                Op::Pool { input, .. } => {
                    if need_dx {
                        ws.grad_next.clear();
                        ws.grad_next.resize(input.len(), F::zero());
                        for (g, &idx) in ws.grad.iter().zip(&ws.pool_argmax) {
                            ws.grad_next[idx as usize] += *g;
                        }
                    }
                }
                Op::Flatten => {
                    if need_dx {
                        ws.grad_next.clear();
                        ws.grad_next.extend_from_slice(&ws.grad);
                    }
                }
                Op::Dense {
                    inputs,
                    units,
                    selu: act,
                } => {
                    if act {
                        for (g, v) in ws.grad.iter_mut().zip(y) {
                            *g = *g * selu_grad_from_output(*v);
                        }
                    }
                    if trainable {
                        let gp = &mut grads[l];
                        matmul(units, 1, inputs, &ws.grad, false, x, false, &mut gp.weight, F::one());
                        for (b, g) in gp.bias.iter_mut().zip(&ws.grad) {
                            *b += *g;
                        }
                    }
                    if need_dx {
                        ws.grad_next.resize(inputs, F::zero());
                        matmul(
                            inputs,
                            units,
                            1,
                            &p.weight,
                            true,
                            &ws.grad,
                            false,
                            &mut ws.grad_next,
                            F::zero(),
                        );
                    }
                }
            }
            if need_dx {
                std::mem::swap(&mut ws.grad, &mut ws.grad_next);
            }
        }
    }

    /// Mean absolute error over a batch and its gradient, starting from
    /// activations that enter layer `start`.
    pub fn loss_and_grad(
        &self,
        inputs: &TensorSet<F>,
        batch: &[usize],
        start: usize,
        ws: &mut Workspace<F>,
        grads: &mut [LayerParams<F>],
    ) -> F {
        grads.iter_mut().for_each(LayerParams::fill_zero);
        let Some(stop) = self.spec.layers.iter().position(|l| !l.frozen) else {
            return self.batch_mae(inputs, batch, start, ws);
        };
        let stop = stop.max(start);
        let scale = F::one() / F::lit(2.0 * batch.len() as f64);
        let mut loss = F::zero();
        for &i in batch {
            let pred = self.forward(inputs.sample(i), start, ws);
            let label = inputs.labels[i];
            let mut dout = [F::zero(); 2];
            for d in 0..2 {
                let diff = pred[d] - label[d];
                loss += diff.abs();
                dout[d] = sign(diff) * scale;
            }
            self.backward(dout, stop, ws, grads);
        }
        loss * scale
    }

    /// Mean absolute error of the predictions on `batch` (no gradients).
    pub fn batch_mae(&self, inputs: &TensorSet<F>, batch: &[usize], start: usize, ws: &mut Workspace<F>) -> F {
        let mut loss = F::zero();
        for &i in batch {
            let pred = self.forward(inputs.sample(i), start, ws);
            let label = inputs.labels[i];
            loss += (pred[0] - label[0]).abs() + (pred[1] - label[1]).abs();
        }
        loss / F::lit(2.0 * batch.len().max(1) as f64)
    }
}

fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn max_pool<F: Real>(x: &[F], input: Shape, output: Shape, kh: usize, kw: usize, y: &mut [F], argmax: &mut [u32]) {
    let (iw, ow) = (input.w, output.w);
    for c in 0..output.c {
        for oy in 0..output.h {
            let o_row = (c * output.h + oy) * ow;
            let y_row = &mut y[o_row..o_row + ow];
            let a_row = &mut argmax[o_row..o_row + ow];
            let base = (c * input.h + oy * kh) * iw;
            for ox in 0..ow {
                let mut best_idx = base + ox * kw;
                let mut best = x[best_idx];
                for dy in 0..kh {
                    let r = base + dy * iw + ox * kw;
                    for (dx, &v) in x[r..r + kw].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = r + dx;
                        }
                    }
                }
                y_row[ox] = best;
                a_row[ox] = best_idx as u32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_per_layer_reproducible() {
        let spec = ModelSpec::tiny();
        let a: Model<f32> = Model::build(spec.clone(), 9).unwrap();
        let mut b: Model<f32> = Model::build(spec, 10).unwrap();
        b.reinit_layers(0..28, 9);
        assert_eq!(a, b);
    }
}
