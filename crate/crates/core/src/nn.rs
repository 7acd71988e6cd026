//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Layers compute `z = x W + b` on row-major batches (`batch x features`).
//! Hidden layers use ReLU; the output layer uses an [`OutputActivation`].
//! Everything is `f64`.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

fn mismatch(expected: impl ToString, got: impl ToString) -> NnError {
    NnError::ShapeMismatch { expected: expected.to_string(), got: got.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
    Softmax,
    /// Tanh on the first `tanh_dims` outputs, softmax over the rest.
    TanhSoftmax { tanh_dims: usize },
}

impl OutputActivation {
    fn code(self) -> (u32, u32) {
        match self {
            OutputActivation::Identity => (0, 0),
            OutputActivation::Tanh => (1, 0),
            OutputActivation::Softmax => (2, 0),
            OutputActivation::TanhSoftmax { tanh_dims } => (3, tanh_dims as u32),
        }
    }

    fn from_code(code: u32, arg: u32) -> Result<Self, NnError> {
        Ok(match code {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Tanh,
            2 => OutputActivation::Softmax,
            3 => OutputActivation::TanhSoftmax { tanh_dims: arg as usize },
            _ => return Err(NnError::Format(format!("unknown activation code {code}"))),
        })
    }

    /// Index at which the softmax block starts, if any.
    fn softmax_start(self, width: usize) -> Option<usize> {
        match self {
            OutputActivation::Softmax => Some(0),
            OutputActivation::TanhSoftmax { tanh_dims } if tanh_dims < width => Some(tanh_dims),
            _ => None,
        }
    }

    fn tanh_end(self, width: usize) -> usize {
        match self {
            OutputActivation::Tanh => width,
            OutputActivation::TanhSoftmax { tanh_dims } => tanh_dims.min(width),
            _ => 0,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        let width = z.ncols();
        let tanh_end = self.tanh_end(width);
        if tanh_end > 0 {
            z.slice_mut(s![.., ..tanh_end]).mapv_inplace(f64::tanh);
        }
        if let Some(start) = self.softmax_start(width) {
            for mut row in z.slice_mut(s![.., start..]).rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
        }
    }

    /// Converts `d(loss)/d(output)` into `d(loss)/d(pre-activation)` given the outputs.
    fn backprop(self, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let width = y.ncols();
        let mut dz = dy.clone();
        let tanh_end = self.tanh_end(width);
        if tanh_end > 0 {
            Zip::from(dz.slice_mut(s![.., ..tanh_end]))
                .and(y.slice(s![.., ..tanh_end]))
                .for_each(|d, &v| *d *= 1.0 - v * v);
        }
        if let Some(start) = self.softmax_start(width) {
            let ys = y.slice(s![.., start..]);
            let mut ds = dz.slice_mut(s![.., start..]);
            for (mut d, p) in ds.rows_mut().into_iter().zip(ys.rows()) {
                let inner = d.dot(&p);
                Zip::from(&mut d).and(&p).for_each(|g, &q| *g = q * (*g - inner));
            }
        }
        dz
    }
}

/// Weights stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputActivation,
}

/// Parameter gradients, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Layer inputs and final output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases. `sizes` is `[input, hidden..., output]`.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.uniform_range(-limit, limit));
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Mlp { sizes: sizes.to_vec(), layers, output }
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>, output: OutputActivation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(mismatch("at least one layer", "none"));
        }
        let mut sizes = vec![layers[0].weights.nrows()];
        for l in &layers {
            if l.weights.nrows() != *sizes.last().unwrap() || l.bias.len() != l.weights.ncols() {
                return Err(mismatch("chained layer shapes", format!("{:?}", l.weights.dim())));
            }
            sizes.push(l.weights.ncols());
        }
        Ok(Mlp { sizes, layers, output })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(x.ncols())?;
        let mut h = x.dot(&self.layers[0].weights) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            h.mapv_inplace(relu);
            h = h.dot(&layer.weights) + &layer.bias;
        }
        self.output.apply(&mut h);
        Ok(h)
    }

    /// Forward pass that keeps what [`Mlp::backward_cached`] needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights) + &layer.bias;
            if k + 1 < self.layers.len() {
                z.mapv_inplace(relu);
            }
            activations.push(h);
            h = z;
        }
        self.output.apply(&mut h);
        Ok(ForwardCache { activations, output: h })
    }

    /// Gradients of `sum_rows <output_row, output_grad_row>` with respect to the
    /// parameters and the input batch.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        self.backprop(cache, output_grad, true).map(|(g, dx)| (g.expect("requested"), dx))
    }

    /// Input gradient only; skips the parameter gradients.
    pub fn input_grad_cached(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.backprop(cache, output_grad, false).map(|(_, dx)| dx)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Array2<f64>), NnError> {
        if output_grad.dim() != cache.output.dim() {
            return Err(mismatch(format!("{:?}", cache.output.dim()), format!("{:?}", output_grad.dim())));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = self.output.backprop(&cache.output, &output_grad.to_owned());
        for k in (0..self.layers.len()).rev() {
            let input = &cache.activations[k];
            if want_params {
                grads.push(Layer { weights: input.t().dot(&dz), bias: dz.sum_axis(Axis(0)) });
            }
            let mut dx = dz.dot(&self.layers[k].weights.t());
            if k > 0 {
                // input of layer k is relu output of layer k-1
                Zip::from(&mut dx).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            dz = dx;
        }
        grads.reverse();
        Ok((want_params.then_some(Gradients { layers: grads }), dz))
    }

    /// Single-sample backward pass (recomputes the forward pass).
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let cache = self.forward_cached(x)?;
        let (grads, dx) = self.backward_cached(&cache, g)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    fn check_input(&self, got: usize) -> Result<(), NnError> {
        if got != self.input_len() {
            return Err(mismatch(format!("input width {}", self.input_len()), format!("input width {got}")));
        }
        Ok(())
    }

    fn check_congruent(&self, layers: &[Layer]) -> Result<(), NnError> {
        if layers.len() != self.layers.len() || self.layers.iter().zip(layers).any(|(a, b)| !a.same_shape(b)) {
            return Err(mismatch(format!("layout {:?}", self.sizes), "incongruent parameters"));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        w.write_all(MLP_MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        let (code, arg) = self.output.code();
        put_u32(w, code)?;
        put_u32(w, arg)?;
        put_u32(w, self.sizes.len() as u32)?;
        for &s in &self.sizes {
            put_u32(w, s as u32)?;
        }
        for l in &self.layers {
            put_f64s(w, l.weights.iter())?;
            put_f64s(w, l.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NnError> {
        expect_magic(r, MLP_MAGIC)?;
        check_version(get_u32(r)?)?;
        let output = OutputActivation::from_code(get_u32(r)?, get_u32(r)?)?;
        let n = get_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(NnError::Format(format!("implausible layer count {n}")));
        }
        let sizes: Vec<usize> = (0..n).map(|_| get_u32(r).map(|v| v as usize)).collect::<Result<_, _>>()?;
        let mut layers = Vec::with_capacity(n - 1);
        for w in sizes.windows(2) {
            let weights = Array2::from_shape_vec((w[0], w[1]), get_f64s(r, w[0] * w[1])?).expect("sized");
            let bias = Array1::from_vec(get_f64s(r, w[1])?);
            layers.push(Layer { weights, bias });
        }
        Ok(Mlp { sizes, layers, output })
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients { layers: net.sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Rescales to global norm `max_norm` when larger. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

/// Adam with bias correction. Descends the supplied gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Layer>,
    second: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    /// One update `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        net.check_congruent(&grads.layers)?;
        net.check_congruent(&self.first)?;
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.first).zip(&mut self.second) {
            let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            Zip::from(&mut layer.weights).and(&g.weights).and(&mut m.weights).and(&mut v.weights).for_each(update);
            Zip::from(&mut layer.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(update);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        w.write_all(ADAM_MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        put_f64s(w, [self.lr, self.beta1, self.beta2, self.eps].iter())?;
        w.write_all(&self.step.to_le_bytes())?;
        put_u32(w, self.first.len() as u32)?;
        for l in &self.first {
            put_u32(w, l.weights.nrows() as u32)?;
            put_u32(w, l.weights.ncols() as u32)?;
        }
        for l in self.first.iter().chain(&self.second) {
            put_f64s(w, l.weights.iter())?;
            put_f64s(w, l.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NnError> {
        expect_magic(r, ADAM_MAGIC)?;
        check_version(get_u32(r)?)?;
        let h = get_f64s(r, 4)?;
        let mut step = [0u8; 8];
        r.read_exact(&mut step)?;
        let n = get_u32(r)? as usize;
        if n > 64 {
            return Err(NnError::Format(format!("implausible layer count {n}")));
        }
        let dims: Vec<(usize, usize)> =
            (0..n).map(|_| Ok((get_u32(r)? as usize, get_u32(r)? as usize))).collect::<Result<_, NnError>>()?;
        let mut read_layers = || -> Result<Vec<Layer>, NnError> {
            dims.iter()
                .map(|&(i, o)| {
                    Ok(Layer {
                        weights: Array2::from_shape_vec((i, o), get_f64s(r, i * o)?).expect("sized"),
                        bias: Array1::from_vec(get_f64s(r, o)?),
                    })
                })
                .collect()
        };
        let first = read_layers()?;
        let second = read_layers()?;
        Ok(Adam { lr: h[0], beta1: h[1], beta2: h[2], eps: h[3], step: u64::from_le_bytes(step), first, second })
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    target.check_congruent(&online.layers)?;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights).and(&o.weights).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

const MLP_MAGIC: &[u8; 8] = b"VGMLP\0\0\0";
const ADAM_MAGIC: &[u8; 8] = b"VGADAM\0\0";
const FORMAT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<'a, W: Write>(w: &mut W, vals: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<(), NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(NnError::Format("wrong file magic".into()));
    }
    Ok(())
}

fn check_version(v: u32) -> Result<(), NnError> {
    if v != FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}
