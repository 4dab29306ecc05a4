//! Fully connected network with tanh hidden layers and a linear final
//! layer. Output heads (sigmoid regression, softmax classification) live
//! with their users; this module owns parameters, backprop and the
//! mini-batch training schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network parameters stored flat. Layer `l` maps `sizes[l]` inputs to
/// `sizes[l + 1]` outputs; its weights are row-major `out × in`, followed by
/// its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass: the input, every hidden tanh
/// output and the final pre-activation.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output layer")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "layer sizes must list at least two non-zero widths, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let prev = &acts[l];
            let weights = &self.params[off..off + n_in * n_out];
            let biases = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let last = l + 1 == n_layers;
            let next: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(biases)
                .map(|(row, b)| {
                    let z = b + row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    /// Final-layer pre-activations.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.trace(input)?;
        Ok(trace.acts.pop().expect("output layer"))
    }

    /// Adds `dL/dparams` to `grad`, given `dL/dz` at the final layer.
    pub fn backprop(&self, trace: &Trace, output_delta: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut delta = output_delta.to_vec();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let input = &trace.acts[l];
            let (gw, rest) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for ((g_row, d), g_b) in gw.chunks_exact_mut(n_in).zip(&delta).zip(rest.iter_mut()) {
                *g_b += d;
                for (g, x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (row, d) in weights.chunks_exact(n_in).zip(&delta) {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    /// Per-layer weights as nested `out × in` rows and biases.
    pub fn layers(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (off, n_in, n_out) in self.layer_offsets() {
            let w = &self.params[off..off + n_in * n_out];
            weights.push(w.chunks_exact(n_in).map(<[f64]>::to_vec).collect());
            biases.push(self.params[off + n_in * n_out..off + n_in * n_out + n_out].to_vec());
        }
        (weights, biases)
    }

    pub fn from_layers(sizes: &[usize], weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let n_layers = sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::InvalidShape(format!(
                "expected {n_layers} weight and bias layers, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut params = Vec::with_capacity(net.params.len());
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if weights[l].len() != n_out || weights[l].iter().any(|row| row.len() != n_in) {
                return Err(Error::InvalidShape(format!("layer {l}: weights must be {n_out}x{n_in}")));
            }
            if biases[l].len() != n_out {
                return Err(Error::InvalidShape(format!("layer {l}: expected {n_out} biases")));
            }
            weights[l].iter().for_each(|row| params.extend_from_slice(row));
            params.extend_from_slice(&biases[l]);
        }
        net.params = params;
        Ok(net)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 0.001;

    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Mini-batch schedule shared by the regressor and the classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Runs shuffled mini-batch Adam over `n` samples. `sample_loss(i, z, dz)`
/// returns the loss of sample `i` given final-layer output `z` and writes
/// `dL/dz` into `dz`. Gradients are averaged over each batch. Returns the
/// mean loss of every epoch.
pub fn fit<'a, I, L>(net: &mut Mlp, n: usize, input: I, mut sample_loss: L, schedule: &Schedule) -> Vec<f64>
where
    I: Fn(usize) -> &'a [f64],
    L: FnMut(usize, &[f64], &mut [f64]) -> f64,
{
    assert!(n > 0 && schedule.batch_size > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = AdamState::new(net.n_params(), schedule.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; net.n_params()];
    let mut dz = vec![0.0; net.output_dim()];
    let mut epoch_losses = Vec::with_capacity(schedule.epochs);
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let trace = net.trace(input(i)).expect("inputs checked by caller");
                total += sample_loss(i, trace.output(), &mut dz);
                net.backprop(&trace, &dz, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(net.params_mut(), &grad);
        }
        epoch_losses.push(total / n as f64);
    }
    epoch_losses
}
