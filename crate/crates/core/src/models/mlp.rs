//! Fully connected network with hand-written backpropagation.
//!
//! Parameters are one flat vector. Layer `l` maps `n_l -> n_{l+1}` and
//! stores its weights row-major (`n_{l+1} x n_l`) followed by its biases.
//! Hidden layers apply the activation; the output layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::{check_dim, Batch, Dataset, Labels, ModelError, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub init_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    /// Offset of each layer's weight block in the flat vector.
    offsets: Vec<usize>,
    n_params: usize,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[L]` the output logits.
    acts: Vec<Vec<f64>>,
    /// Gradient of the loss with respect to the logits.
    d_out: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, ModelError> {
        if spec.layer_sizes.len() < 2 {
            return Err(ModelError::InvalidSpec("an MLP needs at least 2 layers".into()));
        }
        if spec.layer_sizes.contains(&0) {
            return Err(ModelError::InvalidSpec("layer sizes must be positive".into()));
        }
        if spec.loss == Loss::CrossEntropy && *spec.layer_sizes.last().unwrap() < 2 {
            return Err(ModelError::InvalidSpec("cross-entropy needs at least 2 outputs".into()));
        }
        let mut offsets = Vec::new();
        let mut n = 0;
        for w in spec.layer_sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Ok(Self {
            spec,
            offsets,
            n_params: n,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.spec.layer_sizes.len() - 1
    }

    fn layer<'a>(&self, theta: &'a [f64], l: usize) -> (&'a [f64], &'a [f64], usize, usize) {
        let (fan_in, fan_out) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
        let o = self.offsets[l];
        let w = &theta[o..o + fan_in * fan_out];
        let b = &theta[o + fan_in * fan_out..o + fan_in * fan_out + fan_out];
        (w, b, fan_in, fan_out)
    }

    /// Glorot-uniform weights, zero biases, drawn from `init_seed`.
    pub fn init_params(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.init_seed);
        let mut theta = vec![0.0; self.n_params];
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let o = self.offsets[l];
            for w in &mut theta[o..o + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        theta
    }

    fn check_batch(&self, theta: &[f64], batch: &Batch) -> Result<(), ModelError> {
        check_dim(self.n_params, theta.len())?;
        check_dim(self.input_dim(), batch.dim)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        match &batch.labels {
            Labels::Classes(c) => {
                if let Some(&bad) = c.iter().find(|&&k| k >= self.output_dim()) {
                    return Err(ModelError::InvalidSpec(format!(
                        "label {bad} does not fit {} outputs",
                        self.output_dim()
                    )));
                }
            }
            Labels::Values { width, .. } => {
                check_dim(self.output_dim(), *width)?;
                if self.spec.loss == Loss::CrossEntropy {
                    return Err(ModelError::InvalidSpec(
                        "cross-entropy needs class labels".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Mean loss over the batch plus the cache needed by [`Mlp::backward`].
    pub fn forward(&self, theta: &[f64], batch: &Batch) -> Result<(f64, ForwardCache), ModelError> {
        self.check_batch(theta, batch)?;
        let bs = batch.len();
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(batch.inputs.clone());
        for l in 0..self.n_layers() {
            let (w, b, fan_in, fan_out) = self.layer(theta, l);
            let input = &acts[l];
            let mut z = vec![0.0; bs * fan_out];
            for s in 0..bs {
                let x = &input[s * fan_in..(s + 1) * fan_in];
                let out = &mut z[s * fan_out..(s + 1) * fan_out];
                for (j, o) in out.iter_mut().enumerate() {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    *o = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if l + 1 < self.n_layers() {
                match self.spec.activation {
                    Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            acts.push(z);
        }

        let k = self.output_dim();
        let logits = acts.last().unwrap();
        let mut d_out = vec![0.0; bs * k];
        let inv = 1.0 / bs as f64;
        let mut loss = 0.0;
        match (&batch.labels, self.spec.loss) {
            (Labels::Classes(c), Loss::CrossEntropy) => {
                for s in 0..bs {
                    let z = &logits[s * k..(s + 1) * k];
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                    let log_sum = max + sum.ln();
                    loss += log_sum - z[c[s]];
                    for j in 0..k {
                        let p = (z[j] - log_sum).exp();
                        let y = if j == c[s] { 1.0 } else { 0.0 };
                        d_out[s * k + j] = (p - y) * inv;
                    }
                }
            }
            (labels, Loss::Mse) => {
                for s in 0..bs {
                    for j in 0..k {
                        let y = match labels {
                            Labels::Classes(c) => (j == c[s]) as u8 as f64,
                            Labels::Values { data, .. } => data[s * k + j],
                        };
                        let r = logits[s * k + j] - y;
                        loss += r * r;
                        d_out[s * k + j] = 2.0 * r * inv;
                    }
                }
            }
            (Labels::Values { .. }, Loss::CrossEntropy) => unreachable!("rejected by check_batch"),
        }
        Ok((loss * inv, ForwardCache { batch: bs, acts, d_out }))
    }

    /// Exact gradient of the forward loss with respect to `theta`.
    pub fn backward(&self, theta: &[f64], cache: &ForwardCache) -> Vec<f64> {
        let bs = cache.batch;
        let mut grad = vec![0.0; self.n_params];
        let mut delta = cache.d_out.clone();
        for l in (0..self.n_layers()).rev() {
            let (w, _, fan_in, fan_out) = self.layer(theta, l);
            let input = &cache.acts[l];
            let o = self.offsets[l];
            {
                let (gw, gb) = grad[o..o + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for s in 0..bs {
                    let d = &delta[s * fan_out..(s + 1) * fan_out];
                    let x = &input[s * fan_in..(s + 1) * fan_in];
                    for j in 0..fan_out {
                        gb[j] += d[j];
                        let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += d[j] * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; bs * fan_in];
            for s in 0..bs {
                let d = &delta[s * fan_out..(s + 1) * fan_out];
                let p = &mut prev[s * fan_in..(s + 1) * fan_in];
                for j in 0..fan_out {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    for (pi, wi) in p.iter_mut().zip(row) {
                        *pi += d[j] * wi;
                    }
                }
            }
            // `input` holds the post-activation values of the hidden layer.
            match self.spec.activation {
                Activation::Relu => prev
                    .iter_mut()
                    .zip(input)
                    .for_each(|(p, a)| if *a <= 0.0 { *p = 0.0 }),
                Activation::Tanh => prev
                    .iter_mut()
                    .zip(input)
                    .for_each(|(p, a)| *p *= 1.0 - a * a),
            }
            delta = prev;
        }
        grad
    }

    pub fn accuracy(&self, cache: &ForwardCache, labels: &Labels) -> Option<f64> {
        let Labels::Classes(c) = labels else { return None };
        let k = self.output_dim();
        let logits = cache.logits();
        let correct = c
            .iter()
            .enumerate()
            .filter(|(s, &y)| {
                let z = &logits[s * k..(s + 1) * k];
                let arg = (0..k).fold(0, |best, j| if z[j] > z[best] { j } else { best });
                arg == y
            })
            .count();
        Some(correct as f64 / c.len() as f64)
    }
}

/// An [`Mlp`] bound to a dataset.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    mlp: Mlp,
    data: Arc<Dataset>,
}

impl MlpObjective {
    pub fn new(mlp: Mlp, data: Arc<Dataset>) -> Result<Self, ModelError> {
        check_dim(mlp.input_dim(), data.dim)?;
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Self { mlp, data })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn batch(&self, batch: Option<&[usize]>) -> Result<Batch, ModelError> {
        match batch {
            Some(idx) => self.data.gather(idx),
            None => Ok(self.data.full_batch()),
        }
    }
}

impl Objective for MlpObjective {
    fn dim(&self) -> usize {
        self.mlp.param_count()
    }

    fn value_and_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>), ModelError> {
        let b = self.batch(batch)?;
        let (loss, cache) = self.mlp.forward(theta, &b)?;
        Ok((loss, self.mlp.backward(theta, &cache)))
    }

    fn value(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<f64, ModelError> {
        let b = self.batch(batch)?;
        Ok(self.mlp.forward(theta, &b)?.0)
    }

    fn accuracy(&self, theta: &[f64], batch: Option<&[usize]>) -> Option<f64> {
        let b = self.batch(batch).ok()?;
        let (_, cache) = self.mlp.forward(theta, &b).ok()?;
        self.mlp.accuracy(&cache, &b.labels)
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }
}
