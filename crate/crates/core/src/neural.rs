//! Minimal dense networks with analytic gradients, an adaptive-moment
//! optimizer, and Polyak target tracking. Everything runs in f64;
//! determinism matters more than speed at this scale.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Feedforward network: rectifier hidden layers, identity or tanh output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    sizes: Vec<usize>,
    /// Row-major `out x in` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Per-parameter buffers with the same shape as a network; used for
/// gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by a forward pass, input first, output last.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the output")
    }
}

impl MlpNet {
    /// Builds a network with uniform fan-in initialization
    /// (`±1/sqrt(fan_in)` per layer).
    pub fn new(
        sizes: &[usize],
        output_activation: OutputActivation,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(
                "network needs at least input and output sizes, all nonzero",
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push((0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect());
        }
        Ok(MlpNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
            output_activation,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::config("layer count mismatch"));
        }
        for (l, pair) in sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(Error::config(format!("layer {l} shape mismatch")));
            }
        }
        Ok(MlpNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
            output_activation,
        })
    }

    /// Re-initializes the final layer uniformly in `±bound`; standard for
    /// actors that should start with near-zero outputs.
    pub fn reinit_final_uniform(&mut self, bound: f64, rng: &mut dyn RngCore) {
        let last = self.weights.len() - 1;
        for w in &mut self.weights[last] {
            *w = rng.gen_range(-bound..bound);
        }
        for b in &mut self.biases[last] {
            *b = rng.gen_range(-bound..bound);
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.activations.pop().expect("cache holds the output"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_size() {
            return Err(Error::config(format!(
                "input dimension {} does not match network input {}",
                x.len(),
                self.input_size()
            )));
        }
        let mut activations = Vec::with_capacity(self.layer_count() + 1);
        activations.push(x.to_vec());
        for l in 0..self.layer_count() {
            let input = &activations[l];
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for r in 0..rows {
                let row = &w[r * cols..(r + 1) * cols];
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                out[r] += acc;
            }
            let last = l == self.layer_count() - 1;
            if !last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            } else if self.output_activation == OutputActivation::Tanh {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode derivatives of the cached forward pass: parameter
    /// gradients plus the gradient with respect to the input, so callers can
    /// chain networks.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward_accumulate(cache, upstream, &mut grads);
        (grads, dx)
    }

    /// Like [`MlpNet::backward`] but accumulates parameter gradients into an
    /// existing buffer (for batch averaging); returns the input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.output_size());
        let last = self.layer_count() - 1;
        let output = cache.activations.last().unwrap();
        let mut delta: Vec<f64> = match self.output_activation {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Tanh => upstream
                .iter()
                .zip(output)
                .map(|(u, y)| u * (1.0 - y * y))
                .collect(),
        };
        for l in (0..=last).rev() {
            let input = &cache.activations[l];
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            for r in 0..rows {
                let d = delta[r];
                grads.biases[l][r] += d;
                let grow = &mut grads.weights[l][r * cols..(r + 1) * cols];
                for (g, xi) in grow.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                let row = &w[r * cols..(r + 1) * cols];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                // Hidden activations are rectified; gate the flow.
                for (p, a) in prev.iter_mut().zip(&cache.activations[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Convenience: forward + backward in one call.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let cache = self.forward_cached(x)?;
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward_accumulate(&cache, upstream, &mut grads);
        Ok((grads, dx))
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn get_param(&self, index: usize) -> f64 {
        *self.param_slot(index)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.param_slot_mut(index) = value;
    }

    fn param_slot(&self, mut index: usize) -> &f64 {
        for l in 0..self.layer_count() {
            if index < self.weights[l].len() {
                return &self.weights[l][index];
            }
            index -= self.weights[l].len();
            if index < self.biases[l].len() {
                return &self.biases[l][index];
            }
            index -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    fn param_slot_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in 0..self.weights.len() {
            if index < self.weights[l].len() {
                return &mut self.weights[l][index];
            }
            index -= self.weights[l].len();
            if index < self.biases[l].len() {
                return &mut self.biases[l][index];
            }
            index -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flat view in the same order as the network's parameter indexing.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &MlpNet, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Gradients, &Gradients) {
        (&self.m, &self.v)
    }

    /// Applies one update to the network given its gradients.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut update = |param: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        };
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].len() {
                update(
                    &mut net.weights[l][i],
                    &mut self.m.weights[l][i],
                    &mut self.v.weights[l][i],
                    grads.weights[l][i],
                );
            }
            for i in 0..net.biases[l].len() {
                update(
                    &mut net.biases[l][i],
                    &mut self.m.biases[l][i],
                    &mut self.v.biases[l][i],
                    grads.biases[l][i],
                );
            }
        }
    }
}

/// Target tracking: `target <- (1 - tau) * target + tau * online`.
pub fn polyak(target: &mut MlpNet, online: &MlpNet, tau: f64) -> Result<()> {
    if target.sizes != online.sizes {
        return Err(Error::config("target and online networks differ in shape"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("tau must lie in [0, 1], got {tau}")));
    }
    for l in 0..target.weights.len() {
        for (t, o) in target.weights[l].iter_mut().zip(&online.weights[l]) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        for (t, o) in target.biases[l].iter_mut().zip(&online.biases[l]) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    Ok(())
}
