//! Dense feed-forward classifier with an explicit backward pass and a
//! momentum SGD optimizer.
//!
//! Weights of layer `l` are stored with shape `(fan_in, fan_out)` so a batch
//! `X` of shape `(m, fan_in)` maps to `X · W + b`. The hidden activation is
//! applied after every layer except the last, which emits raw logits.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    // Bumped by every optimizer step so stale forward caches are detected.
    generation: u64,
}

/// Activation record kept by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    generation: u64,
    layer_sizes: Vec<usize>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl MlpModel {
    /// Glorot-uniform initialization, zero biases.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            generation: 0,
        })
    }

    /// Builds a model from explicit parameters, checking that shapes chain.
    pub fn from_parameters(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *layer_sizes.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {l} expects {} inputs, previous layer emits {}",
                    w.nrows(),
                    layer_sizes.last().unwrap()
                )));
            }
            if b.len() != w.ncols() {
                return Err(Error::Shape(format!(
                    "layer {l} bias has {} entries for {} outputs",
                    b.len(),
                    w.ncols()
                )));
            }
            layer_sizes.push(w.ncols());
        }
        validate_layer_sizes(&layer_sizes)?;
        let model = MlpModel {
            layer_sizes,
            weights,
            biases,
            activation,
            generation: 0,
        };
        if !model.is_finite() {
            return Err(Error::Contract("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn n_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to a single scalar parameter, in checkpoint order
    /// (all of layer 0's weights row-major, then its biases, then layer 1...).
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        self.generation += 1;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                return w.as_slice_mut().map(|s| &mut s[index]);
            }
            index -= w.len();
            if index < b.len() {
                return Some(&mut b[index]);
            }
            index -= b.len();
        }
        None
    }

    /// Logits only, without keeping the activation record.
    pub fn predict_logits(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let last = self.weights.len() - 1;
        let mut h = batch.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_batch(batch)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = batch.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w);
            z += b;
            inputs.push(h);
            if l < last {
                let a = z.mapv(|v| self.activation.apply(v));
                pre_activations.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        let cache = ForwardCache {
            inputs,
            pre_activations,
            generation: self.generation,
            layer_sizes: self.layer_sizes.clone(),
        };
        Ok((h, cache))
    }

    /// Backpropagates `dl_dlogits` through the network recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, dl_dlogits: ArrayView2<'_, f64>) -> Result<Gradients> {
        if cache.layer_sizes != self.layer_sizes || cache.generation != self.generation {
            return Err(Error::Contract(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        let m = cache.batch_size();
        if dl_dlogits.dim() != (m, self.n_classes()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected ({m}, {})",
                dl_dlogits.dim(),
                self.n_classes()
            )));
        }
        let n_layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b = vec![Array1::zeros(0); n_layers];
        let mut delta = dl_dlogits.to_owned();
        for l in (0..n_layers).rev() {
            grad_w[l] = cache.inputs[l].t().dot(&delta);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                let act = self.activation;
                upstream.zip_mut_with(&cache.pre_activations[l - 1], |d, &pre| {
                    *d *= act.derivative(pre)
                });
                delta = upstream;
            }
        }
        Ok(Gradients {
            weights: grad_w,
            biases: grad_b,
        })
    }

    fn check_batch(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Shape(
            "need at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Shape("layer sizes must be positive".into()));
    }
    Ok(())
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut probs = logits.to_owned();
    for mut row in probs.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Index of the largest entry, ties resolved toward the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Step learning-rate schedule: `(first_epoch, lr)` pairs with strictly
/// increasing thresholds. The rate for an epoch is the one of the last entry
/// whose threshold does not exceed it (or the first entry before it starts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Config("learning-rate schedule is empty".into()));
        }
        if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "learning-rate thresholds must be strictly increasing".into(),
            ));
        }
        if steps.iter().any(|&(_, lr)| !(lr.is_finite() && lr >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        Ok(LrSchedule(steps))
    }

    pub fn constant(lr: f64) -> Self {
        LrSchedule(vec![(0, lr)])
    }

    /// Divides the rate by ten at half and five sixths of the run.
    pub fn step_decay(lr: f64, epochs: usize) -> Self {
        let first = epochs / 2;
        let second = epochs * 5 / 6;
        let mut steps = vec![(0, lr)];
        if first > 0 {
            steps.push((first, lr / 10.0));
        }
        if second > first {
            steps.push((second, lr / 100.0));
        }
        LrSchedule(steps)
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .unwrap_or(&self.0[0])
            .1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_schedule: LrSchedule::step_decay(0.1, 200),
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        LrSchedule::new(self.lr_schedule.0.clone())?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay {} must be finite and nonnegative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum buffers plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    velocity: Gradients,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            velocity: Gradients::zeros_like(model),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// `v <- momentum * v + (g + weight_decay * p)`, then `p <- p - lr(epoch) * v`.
pub fn sgd_step(
    model: &mut MlpModel,
    state: &mut OptimizerState,
    grads: &Gradients,
    epoch: usize,
) -> Result<()> {
    let shapes_match = grads.weights.len() == model.weights.len()
        && grads.biases.len() == model.biases.len()
        && grads
            .weights
            .iter()
            .zip(&model.weights)
            .all(|(g, w)| g.dim() == w.dim())
        && grads
            .biases
            .iter()
            .zip(&model.biases)
            .all(|(g, b)| g.dim() == b.dim())
        && state
            .velocity
            .weights
            .iter()
            .zip(&model.weights)
            .all(|(v, w)| v.dim() == w.dim());
    if !shapes_match {
        return Err(Error::Shape(
            "gradients or momentum buffers do not match parameters".into(),
        ));
    }
    let lr = state.config.lr_schedule.lr(epoch);
    let mu = state.config.momentum;
    let wd = state.config.weight_decay;
    let update = |p: &mut f64, v: &mut f64, g: f64| {
        *v = mu * *v + (g + wd * *p);
        *p -= lr * *v;
    };
    for l in 0..model.weights.len() {
        ndarray::Zip::from(&mut model.weights[l])
            .and(&mut state.velocity.weights[l])
            .and(&grads.weights[l])
            .for_each(|p, v, &g| update(p, v, g));
        ndarray::Zip::from(&mut model.biases[l])
            .and(&mut state.velocity.biases[l])
            .and(&grads.biases[l])
            .for_each(|p, v, &g| update(p, v, g));
    }
    model.generation += 1;
    if !model.is_finite() {
        return Err(Error::Contract(
            "optimizer step produced a non-finite parameter".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn naive_forward(model: &MlpModel, x: &Array2<f64>) -> Array2<f64> {
        let mut h: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let last = model.weights().len() - 1;
        for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
            let mut next = vec![vec![0.0; w.ncols()]; h.len()];
            for (i, row) in h.iter().enumerate() {
                for j in 0..w.ncols() {
                    let mut acc = b[j];
                    for (k, &hv) in row.iter().enumerate() {
                        acc += hv * w[[k, j]];
                    }
                    next[i][j] = if l < last {
                        model.activation().apply(acc)
                    } else {
                        acc
                    };
                }
            }
            h = next;
        }
        let cols = h[0].len();
        Array2::from_shape_vec((h.len(), cols), h.concat()).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let model = MlpModel::from_parameters(
            vec![Array2::zeros((3, 4)), Array2::zeros((4, 2))],
            vec![Array1::zeros(4), Array1::zeros(2)],
            Activation::Tanh,
        )
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.1, 0.2, 0.3]];
        let (logits, _) = model.forward(x.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let model = MlpModel::from_parameters(
            vec![Array2::eye(2)],
            vec![Array1::zeros(2)],
            Activation::Relu,
        )
        .unwrap();
        let (logits, _) = model.forward(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(logits, array![[1.0, 2.0]]);
    }

    #[test]
    fn forward_matches_triple_loop() {
        for (seed, act) in [(3, Activation::Relu), (4, Activation::Tanh)] {
            let model = MlpModel::new(&[5, 7, 6, 3], act, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = Array2::from_shape_fn((9, 5), |_| rng.random_range(-2.0..2.0));
            let (logits, _) = model.forward(x.view()).unwrap();
            let expected = naive_forward(&model, &x);
            for (a, b) in logits.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = MlpModel::new(&[2, 3], Activation::Relu, 0).unwrap();
        let err = model.forward(Array2::zeros((1, 3)).view()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn mismatched_parameter_shapes_rejected() {
        let err = MlpModel::from_parameters(
            vec![Array2::zeros((2, 3)), Array2::zeros((4, 2))],
            vec![Array1::zeros(3), Array1::zeros(2)],
            Activation::Relu,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(array![[0.0, 0.0, 0.0]].view());
        for &v in p.iter() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(array![[1000.0, 0.0]].view());
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(p[[0, 1]], 0.0);
        // e^x / sum e^x for x = (1, 2, 3), evaluated by hand.
        let p = softmax(array![[1.0, 2.0, 3.0]].view());
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = MlpModel::new(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let x = array![[0.5, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let (_, cache) = model.forward(x.view()).unwrap();
        let g = model.backward(&cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_squared_error_gradient_is_closed_form() {
        // L = 1/(2m) * ||XW + b - Y||^2, so dL/dW = X^T (P - Y) / m.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = MlpModel::new(&[4, 3], Activation::Relu, 2).unwrap();
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let (p, cache) = model.forward(x.view()).unwrap();
        let m = x.nrows() as f64;
        let upstream = (&p - &y) / m;
        let g = model.backward(&cache, upstream.view()).unwrap();
        let mut expected = Array2::<f64>::zeros((4, 3));
        for i in 0..6 {
            for k in 0..4 {
                for j in 0..3 {
                    expected[[k, j]] += x[[i, k]] * (p[[i, j]] - y[[i, j]]) / m;
                }
            }
        }
        for (a, b) in g.weights[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = MlpModel::new(&[2, 2], Activation::Relu, 0).unwrap();
        let (_, cache) = model.forward(array![[1.0, 1.0]].view()).unwrap();
        let mut state = OptimizerState::new(&model, OptimizerConfig::default()).unwrap();
        let g = Gradients::zeros_like(&model);
        sgd_step(&mut model, &mut state, &g, 0).unwrap();
        let err = model.backward(&cache, Array2::zeros((1, 2)).view()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    fn plain_config(lr: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig {
            lr_schedule: LrSchedule::constant(lr),
            momentum,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut model = MlpModel::new(&[3, 2], Activation::Relu, 5).unwrap();
        let before = model.clone();
        let mut state = OptimizerState::new(&model, plain_config(0.1, 0.9)).unwrap();
        let g = Gradients::zeros_like(&model);
        sgd_step(&mut model, &mut state, &g, 0).unwrap();
        assert_eq!(model.weights(), before.weights());
        assert_eq!(model.biases(), before.biases());
    }

    #[test]
    fn sgd_without_momentum_subtracts_scaled_gradient() {
        let mut model = MlpModel::new(&[2, 2], Activation::Relu, 6).unwrap();
        let before = model.clone();
        let mut state = OptimizerState::new(&model, plain_config(0.1, 0.0)).unwrap();
        let mut g = Gradients::zeros_like(&model);
        g.weights[0] = array![[1.0, -2.0], [0.5, 4.0]];
        g.biases[0] = array![3.0, -1.0];
        sgd_step(&mut model, &mut state, &g, 0).unwrap();
        for ((p, p0), gv) in model.weights()[0]
            .iter()
            .zip(before.weights()[0].iter())
            .zip(g.weights[0].iter())
        {
            assert_eq!(*p, p0 - 0.1 * gv);
        }
        assert_eq!(model.biases()[0], array![-0.30000000000000004, 0.1]);
    }

    #[test]
    fn momentum_two_step_unroll() {
        let mut model = MlpModel::new(&[1, 1], Activation::Relu, 7).unwrap();
        let p0 = model.weights()[0][[0, 0]];
        let mut state = OptimizerState::new(&model, plain_config(0.1, 0.9)).unwrap();
        let mut g1 = Gradients::zeros_like(&model);
        g1.weights[0][[0, 0]] = 2.0;
        let mut g2 = Gradients::zeros_like(&model);
        g2.weights[0][[0, 0]] = -1.0;
        sgd_step(&mut model, &mut state, &g1, 0).unwrap();
        sgd_step(&mut model, &mut state, &g2, 1).unwrap();
        let v1 = 2.0;
        let v2 = 0.9 * v1 + -1.0;
        let expected = p0 - 0.1 * v1 - 0.1 * v2;
        assert!((model.weights()[0][[0, 0]] - expected).abs() < 1e-15);
        assert!((state.velocity().weights[0][[0, 0]] - v2).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut model = MlpModel::new(&[1, 1], Activation::Relu, 8).unwrap();
        let p0 = model.weights()[0][[0, 0]];
        let cfg = OptimizerConfig {
            lr_schedule: LrSchedule::constant(0.5),
            momentum: 0.0,
            weight_decay: 0.1,
        };
        let mut state = OptimizerState::new(&model, cfg).unwrap();
        let g = Gradients::zeros_like(&model);
        sgd_step(&mut model, &mut state, &g, 0).unwrap();
        assert_eq!(model.weights()[0][[0, 0]], p0 - 0.5 * (0.1 * p0));
    }

    #[test]
    fn schedule_lookup() {
        let s = LrSchedule::new(vec![(0, 0.1), (150, 0.01), (250, 0.001)]).unwrap();
        assert_eq!(s.lr(0), 0.1);
        assert_eq!(s.lr(149), 0.1);
        assert_eq!(s.lr(150), 0.01);
        assert_eq!(s.lr(300), 0.001);
        assert!(LrSchedule::new(vec![(0, 0.1), (0, 0.2)]).is_err());
        assert!(LrSchedule::new(vec![(10, 0.1), (5, 0.2)]).is_err());
        let d = LrSchedule::step_decay(0.1, 300);
        assert_eq!(d.steps(), &[(0, 0.1), (150, 0.01), (250, 0.001)]);
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = MlpModel::new(&[4, 8, 3], Activation::Relu, 42).unwrap();
        let b = MlpModel::new(&[4, 8, 3], Activation::Relu, 42).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.weights()[0].iter().all(|v| v.abs() <= limit));
        assert_eq!(a.n_parameters(), 4 * 8 + 8 + 8 * 3 + 3);
    }
}
