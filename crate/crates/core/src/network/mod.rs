//! Fully connected classifier: forward pass with activity capture,
//! per-sample cross-entropy, hand-written backpropagation, and the
//! finite-difference Hessian of one layer's weights.

mod checkpoint;
mod hessian;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use hessian::{central_difference_hessian, fd_step, layer_hessian, LayerCache, LayerHessian, DEFAULT_HESSIAN_CAP};
pub(crate) use hessian::{chunk_ranges, layer_hessian_cached};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::scalar::Real;

/// Hidden-layer nonlinearity; the output layer is always softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weights of one fully connected layer. `weights` is `fan_in x fan_out`, so
/// `w_ij` connects unit `i` below to unit `j` above and the flattened index
/// of `w_ij` is `i * fan_out + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> Layer<T> {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

/// Parameters of a multilayer perceptron. Layer `s` (1-based) holds `w^[s]`
/// between activity layers `s-1` and `s`; activity layer 0 is the input.
///
/// The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer<T>>,
}

/// Everything computed on the way through the network for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// `activities[s]` is `a^[s]`; `activities[0]` is the input and the last
    /// entry is the top hidden layer.
    pub activities: Vec<Vec<T>>,
    /// `preactivations[s-1]` is the pre-activation vector feeding layer `s`.
    pub preactivations: Vec<Vec<T>>,
    pub probabilities: Vec<T>,
    pub loss: T,
}

/// Reusable buffers for the allocation-free forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    z: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
    mask: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
    grad_delta: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new(model: &Mlp<T>) -> Self {
        let s = model.num_layers();
        Self {
            z: (1..=s).map(|l| vec![T::zero(); model.sizes[l]]).collect(),
            act: (1..s).map(|l| vec![T::zero(); model.sizes[l]]).collect(),
            mask: (1..s).map(|l| vec![T::one(); model.sizes[l]]).collect(),
            delta: Vec::with_capacity(model.max_width()),
            delta_prev: Vec::with_capacity(model.max_width()),
            grad_delta: Vec::with_capacity(model.max_width()),
        }
    }
}

/// Inverted-dropout configuration for a training-mode pass.
pub struct Dropout<'a, R> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<T: Real> Mlp<T> {
    /// All-zero parameters for `sizes = [input, hidden.., output]`.
    pub fn zeros(sizes: &[usize], activation: Activation, biases: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[0], w[1]),
                bias: biases.then(|| vec![T::zero(); w[1]]),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
        })
    }

    pub fn from_layers(activation: Activation, layers: Vec<Layer<T>>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Shape("no layers".into()))?;
        let mut sizes = vec![first.fan_in()];
        for layer in &layers {
            if layer.fan_in() != *sizes.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer with fan-in {} follows width {}",
                    layer.fan_in(),
                    sizes.last().unwrap()
                )));
            }
            if layer.bias.as_ref().is_some_and(|b| b.len() != layer.fan_out()) {
                return Err(Error::Shape("bias length differs from fan-out".into()));
            }
            sizes.push(layer.fan_out());
        }
        let model = Self {
            sizes,
            activation,
            layers,
        };
        if !model.is_finite() {
            return Err(Error::Input("non-finite parameter".into()));
        }
        Ok(model)
    }

    /// A zero-valued container with the same shape.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes, self.activation, self.has_biases()).expect("valid shape")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of weight layers `S`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn has_biases(&self) -> bool {
        self.layers[0].bias.is_some()
    }

    fn max_width(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Layer `s`, 1-based.
    pub fn layer(&self, s: usize) -> &Layer<T> {
        &self.layers[s - 1]
    }

    pub fn layer_mut(&mut self, s: usize) -> &mut Layer<T> {
        &mut self.layers[s - 1]
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn check_layer(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.num_layers() {
            return Err(Error::Input(format!(
                "layer {s} out of range 1..={}",
                self.num_layers()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.is_finite() && l.bias.as_ref().is_none_or(|b| b.iter().all(|x| x.is_finite()))
        })
    }

    /// `self += alpha * other` over weights and biases.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(alpha, b.weights.as_slice(), a.weights.as_mut_slice());
            if let (Some(ab), Some(bb)) = (a.bias.as_mut(), b.bias.as_ref()) {
                axpy(alpha, bb, ab);
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for l in &mut self.layers {
            crate::linalg::scale(alpha, l.weights.as_mut_slice());
            if let Some(b) = l.bias.as_mut() {
                crate::linalg::scale(alpha, b);
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().fill(T::zero());
            if let Some(b) = l.bias.as_mut() {
                b.fill(T::zero());
            }
        }
    }

    /// Number of weights and biases.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Inverse of [`Mlp::to_flat`].
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            let len = w.len();
            w.copy_from_slice(&flat[at..at + len]);
            at += len;
            if let Some(b) = l.bias.as_mut() {
                let len = b.len();
                b.copy_from_slice(&flat[at..at + len]);
                at += len;
            }
        }
        Ok(())
    }

    /// Squared L2 norm of all weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> T {
        self.layers.iter().map(|l| crate::linalg::norm_sq(l.weights.as_slice())).sum()
    }

    /// Squared Euclidean distance over weights and biases.
    pub fn distance_sq(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                acc += (*x - *y) * (*x - *y);
            }
            if let (Some(ab), Some(bb)) = (a.bias.as_ref(), b.bias.as_ref()) {
                for (x, y) in ab.iter().zip(bb) {
                    acc += (*x - *y) * (*x - *y);
                }
            }
        }
        acc
    }

    /// Mean of several models of identical shape, accumulated in slice order
    /// as `m_0 + Σ (m_j - m_0) / n`, so that identical models average to
    /// themselves exactly.
    pub fn mean_of(models: &[&Self]) -> Self {
        let first = models[0];
        let inv = T::one() / T::from_usize_lossy(models.len());
        let mut dev = first.zeros_like();
        for m in &models[1..] {
            dev.axpy(T::one(), m);
            dev.axpy(-T::one(), first);
        }
        let mut out = first.clone();
        out.axpy(inv, &dev);
        out
    }

    fn check_input(&self, x: &[T], label: usize) -> Result<()> {
        if x.len() != self.sizes[0] {
            return Err(Error::Shape(format!(
                "input of length {} for input layer of width {}",
                x.len(),
                self.sizes[0]
            )));
        }
        if label >= self.num_classes() {
            return Err(Error::Input(format!("label {label} for {} classes", self.num_classes())));
        }
        Ok(())
    }

    /// Full forward pass with every intermediate captured.
    pub fn forward(&self, x: &[T], label: usize) -> Result<ForwardTrace<T>> {
        self.check_input(x, label)?;
        let mut activities = vec![x.to_vec()];
        let mut preactivations = Vec::with_capacity(self.num_layers());
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = vec![T::zero(); layer.fan_out()];
            affine(layer, activities.last().unwrap(), &mut z);
            if idx + 1 < self.num_layers() {
                activities.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            preactivations.push(z);
        }
        let logits = preactivations.last().unwrap();
        let (loss, probabilities) = softmax_cross_entropy(logits, label);
        if !loss.is_finite() || probabilities.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite activation in forward pass".into()));
        }
        Ok(ForwardTrace {
            activities,
            preactivations,
            probabilities,
            loss,
        })
    }

    /// Activity vector `a^[layer]` (`layer = 0` returns the input).
    pub fn activity(&self, x: &[T], layer: usize) -> Vec<T> {
        let mut cur = x.to_vec();
        for l in &self.layers[..layer] {
            let mut z = vec![T::zero(); l.fan_out()];
            affine(l, &cur, &mut z);
            for v in z.iter_mut() {
                *v = self.activation.apply(*v);
            }
            cur = z;
        }
        cur
    }

    /// Evaluation-mode loss and whether the arg-max class equals `label`.
    pub fn evaluate(&self, x: &[T], label: usize, ws: &mut Workspace<T>) -> (T, bool) {
        self.forward_ws(x, None::<&mut Dropout<'_, rand_chacha::ChaCha8Rng>>, ws);
        let logits = ws.z.last().unwrap();
        let predicted = argmax(logits);
        (log_softmax_loss(logits, label), predicted == label)
    }

    /// Loss of one sample; evaluation mode.
    pub fn loss(&self, x: &[T], label: usize, ws: &mut Workspace<T>) -> T {
        self.evaluate(x, label, ws).0
    }

    fn forward_ws<R: Rng>(&self, x: &[T], mut dropout: Option<&mut Dropout<'_, R>>, ws: &mut Workspace<T>) {
        let s = self.num_layers();
        for l in 0..s {
            let (_, upper) = ws.z.split_at_mut(l);
            let z = &mut upper[0];
            let input: &[T] = if l == 0 { x } else { &ws.act[l - 1] };
            affine(&self.layers[l], input, z);
            if l + 1 < s {
                let act = &mut ws.act[l];
                let mask = &mut ws.mask[l];
                match dropout.as_deref_mut() {
                    Some(d) if d.rate > 0.0 => {
                        let keep = T::lit(1.0 / (1.0 - d.rate));
                        for j in 0..act.len() {
                            mask[j] = if d.rng.gen::<f64>() < d.rate { T::zero() } else { keep };
                            act[j] = self.activation.apply(z[j]) * mask[j];
                        }
                    }
                    _ => {
                        mask.fill(T::one());
                        for j in 0..act.len() {
                            act[j] = self.activation.apply(z[j]);
                        }
                    }
                }
            }
        }
    }

    /// Adds `weight · ∇l(x, label)` to `grad` and returns the sample loss.
    /// With `dropout` the pass runs in training mode (inverted dropout on
    /// every hidden layer).
    pub fn accumulate_gradient<R: Rng>(
        &self,
        x: &[T],
        label: usize,
        weight: T,
        dropout: Option<&mut Dropout<'_, R>>,
        ws: &mut Workspace<T>,
        grad: &mut Self,
    ) -> T {
        self.forward_ws(x, dropout, ws);
        let s = self.num_layers();
        let logits = &ws.z[s - 1];
        let loss = log_softmax_loss(logits, label);
        ws.delta.clear();
        ws.delta.extend(softmax(logits));
        ws.delta[label] -= T::one();
        for l in (0..s).rev() {
            let input: &[T] = if l == 0 { x } else { &ws.act[l - 1] };
            let g = &mut grad.layers[l];
            outer_accumulate(input, &ws.delta, weight, g.weights.as_mut_slice());
            if let Some(b) = g.bias.as_mut() {
                axpy(weight, &ws.delta, b);
            }
            if l > 0 {
                let w = &self.layers[l].weights;
                ws.delta_prev.clear();
                for i in 0..w.rows() {
                    let zi = ws.z[l - 1][i];
                    let m = ws.mask[l - 1][i];
                    let back = if m == T::zero() {
                        T::zero()
                    } else {
                        crate::linalg::dot(w.row(i), &ws.delta) * self.activation.derivative(zi) * m
                    };
                    ws.delta_prev.push(back);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
        loss
    }

    /// Exact gradient of one sample's cross-entropy, shaped like the model.
    pub fn sample_gradient(&self, x: &[T], label: usize) -> Result<Self> {
        self.check_input(x, label)?;
        let mut grad = self.zeros_like();
        let mut ws = Workspace::new(self);
        let loss = self.accumulate_gradient::<rand_chacha::ChaCha8Rng>(x, label, T::one(), None, &mut ws, &mut grad);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(grad)
    }

    /// Mean gradient over the listed samples; samples are accumulated in order.
    pub fn batch_gradient(&self, data: &LabeledSet<T>, indices: &[usize]) -> Self {
        let mut grad = self.zeros_like();
        let mut ws = Workspace::new(self);
        let w = T::one() / T::from_usize_lossy(indices.len().max(1));
        for &k in indices {
            self.accumulate_gradient::<rand_chacha::ChaCha8Rng>(data.features(k), data.label(k), w, None, &mut ws, &mut grad);
        }
        grad
    }

    /// Pre-activation feeding layer `s` given `a^[s-1]` and explicit layer-`s`
    /// weights (flattened, `fan_in * fan_out`).
    pub fn layer_preactivation(&self, s: usize, a_prev: &[T], w_s: &[T], z: &mut [T]) {
        let layer = &self.layers[s - 1];
        match &layer.bias {
            Some(b) => z.copy_from_slice(b),
            None => z.fill(T::zero()),
        }
        let cols = layer.fan_out();
        for (i, &a) in a_prev.iter().enumerate() {
            if a != T::zero() {
                axpy(a, &w_s[i * cols..(i + 1) * cols], z);
            }
        }
    }

    /// Loss when the pre-activation feeding layer `s` is `z_s`, with every
    /// layer above `s` at its current weights. If `delta` is given it
    /// receives `∂l/∂z_s`.
    pub fn upper_loss(&self, s: usize, z_s: &[T], label: usize, ws: &mut Workspace<T>, delta: Option<&mut Vec<T>>) -> T {
        ws.z[s - 1].copy_from_slice(z_s);
        self.upper_from_workspace(s, label, ws, delta)
    }

    /// As [`Mlp::upper_loss`] with `z_s` already stored in the workspace.
    fn upper_from_workspace(&self, s: usize, label: usize, ws: &mut Workspace<T>, delta: Option<&mut Vec<T>>) -> T {
        self.upper_gated(s, label, ws, None, delta)
    }

    /// Width of the hidden layers at and above `s`, i.e. the length of a gate
    /// pattern for [`Mlp::upper_loss_gated`].
    pub fn gate_len(&self, s: usize) -> usize {
        self.sizes[s..self.num_layers()].iter().sum()
    }

    /// ReLU on/off pattern (1 or 0 per hidden unit at and above layer `s`) of
    /// the pass that starts from `z_s`.
    pub fn relu_gates(&self, s: usize, z_s: &[T], label: usize, ws: &mut Workspace<T>, gates: &mut Vec<T>) {
        ws.z[s - 1].copy_from_slice(z_s);
        self.upper_gated(s, label, ws, None, None);
        gates.clear();
        for l in s..self.num_layers() {
            gates.extend(ws.z[l - 1].iter().map(|&z| if z > T::zero() { T::one() } else { T::zero() }));
        }
    }

    /// As [`Mlp::upper_loss`], but with every ReLU above `s` held at the given
    /// on/off pattern, which makes the loss smooth in `z_s` around the point
    /// the pattern came from. Ignored for smooth activations.
    pub fn upper_loss_gated(
        &self,
        s: usize,
        z_s: &[T],
        label: usize,
        ws: &mut Workspace<T>,
        gates: &[T],
        delta: Option<&mut Vec<T>>,
    ) -> T {
        ws.z[s - 1].copy_from_slice(z_s);
        let gates = (self.activation == Activation::Relu).then_some(gates);
        self.upper_gated(s, label, ws, gates, delta)
    }

    fn upper_gated(&self, s: usize, label: usize, ws: &mut Workspace<T>, gates: Option<&[T]>, delta: Option<&mut Vec<T>>) -> T {
        let top = self.num_layers();
        let offsets: Vec<usize> = (s..top)
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += self.sizes[l];
                Some(o)
            })
            .collect();
        for l in s..top {
            // ws.z[l - 1] feeds activity layer l; self.layers[l] maps it upward
            {
                let act = &mut ws.act[l - 1];
                let z = &ws.z[l - 1];
                match gates {
                    Some(g) => {
                        let g = &g[offsets[l - s]..offsets[l - s] + act.len()];
                        for ((a, &zj), &gj) in act.iter_mut().zip(z).zip(g) {
                            *a = zj * gj;
                        }
                    }
                    None => {
                        for (a, &zj) in act.iter_mut().zip(z) {
                            *a = self.activation.apply(zj);
                        }
                    }
                }
            }
            let (_, upper) = ws.z.split_at_mut(l);
            affine(&self.layers[l], &ws.act[l - 1], &mut upper[0]);
        }
        let logits = &ws.z[top - 1];
        let loss = log_softmax_loss(logits, label);
        if let Some(out) = delta {
            ws.delta.clear();
            ws.delta.extend(softmax(logits));
            ws.delta[label] -= T::one();
            for l in (s..top).rev() {
                let w = &self.layers[l].weights;
                ws.delta_prev.clear();
                for i in 0..w.rows() {
                    let slope = match gates {
                        Some(g) => g[offsets[l - s] + i],
                        None => self.activation.derivative(ws.z[l - 1][i]),
                    };
                    let back = if slope == T::zero() {
                        T::zero()
                    } else {
                        crate::linalg::dot(w.row(i), &ws.delta) * slope
                    };
                    ws.delta_prev.push(back);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
            out.clear();
            out.extend_from_slice(&ws.delta);
        }
        loss
    }

    /// Loss of a sample whose layer-`(s-1)` activity is `a_prev`, with layer-`s`
    /// weights replaced by `w_s`.
    pub fn tail_loss(&self, s: usize, a_prev: &[T], label: usize, w_s: &[T], ws: &mut Workspace<T>) -> T {
        self.layer_preactivation(s, a_prev, w_s, &mut ws.z[s - 1]);
        self.upper_from_workspace(s, label, ws, None)
    }

    /// As [`Mlp::tail_loss`], also adding `weight · ∂l/∂w^[s]` to `grad_w`.
    pub fn tail_gradient(
        &self,
        s: usize,
        a_prev: &[T],
        label: usize,
        w_s: &[T],
        weight: T,
        ws: &mut Workspace<T>,
        grad_w: &mut [T],
    ) -> T {
        self.layer_preactivation(s, a_prev, w_s, &mut ws.z[s - 1]);
        let mut delta = std::mem::take(&mut ws.grad_delta);
        let loss = self.upper_from_workspace(s, label, ws, Some(&mut delta));
        outer_accumulate(a_prev, &delta, weight, grad_w);
        ws.grad_delta = delta;
        loss
    }
}

#[inline]
fn affine<T: Real>(layer: &Layer<T>, input: &[T], z: &mut [T]) {
    match &layer.bias {
        Some(b) => z.copy_from_slice(b),
        None => z.fill(T::zero()),
    }
    for (i, &a) in input.iter().enumerate() {
        if a != T::zero() {
            axpy(a, layer.weights.row(i), z);
        }
    }
}

/// `g[i*cols + j] += weight * a[i] * delta[j]`
#[inline]
pub(crate) fn outer_accumulate<T: Real>(a: &[T], delta: &[T], weight: T, g: &mut [T]) {
    let cols = delta.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != T::zero() {
            axpy(weight * ai, delta, &mut g[i * cols..(i + 1) * cols]);
        }
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax<T: Real>(logits: &[T]) -> impl Iterator<Item = T> + '_ {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    // Probabilities below the normal range are flushed to zero: subnormal
    // deltas would otherwise slow every later multiply by two orders of
    // magnitude once the network is confident.
    logits.iter().map(move |&z| {
        let p = (z - max).exp() / sum;
        if p < T::min_positive_value() {
            T::zero()
        } else {
            p
        }
    })
}

/// `-log softmax(logits)[label]` via log-sum-exp.
#[inline]
fn log_softmax_loss<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    sum.ln() - (logits[label] - max)
}

fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    (log_softmax_loss(logits, label), softmax(logits).collect())
}
