use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class indices, contiguous from zero.
    Classes(Vec<usize>),
    /// Real-valued regression targets, `width` values per sample.
    Values { data: Vec<f64>, width: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Values { data, width } => data.len() / (*width).max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Values { data, width } => Labels::Values {
                data: idx
                    .iter()
                    .flat_map(|&i| data[i * width..(i + 1) * width].iter().copied())
                    .collect(),
                width: *width,
            },
        }
    }
}

/// Row-major `n x dim` inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Labels,
    pub split: Split,
}

/// A gathered subset of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Labels,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Labels, split: Split) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidSpec("input dimension must be positive".into()));
        }
        if !inputs.len().is_multiple_of(dim) || inputs.len() / dim != labels.len() {
            return Err(ModelError::ShapeMismatch {
                expected: labels.len() * dim,
                found: inputs.len(),
            });
        }
        Ok(Self { inputs, dim, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Classes(c) => c.iter().max().map(|m| m + 1),
            Labels::Values { .. } => None,
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Result<Batch, ModelError> {
        let n = self.len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(ModelError::BatchIndex { index: bad, len: n });
        }
        let inputs = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Ok(Batch {
            inputs,
            dim: self.dim,
            labels: self.labels.select(idx),
        })
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            dim: self.dim,
            labels: self.labels.clone(),
        }
    }

    fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        let b = self.gather(idx).expect("indices in range");
        Dataset {
            inputs: b.inputs,
            dim: b.dim,
            labels: b.labels,
            split,
        }
    }

    /// Shuffles with `seed` and splits off the first `fraction` of samples.
    /// The first part keeps this dataset's split tag; the rest is `rest`.
    pub fn split_off(&self, fraction: f64, seed: u64, rest: Split) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((self.len() as f64) * fraction).round() as usize;
        let k = k.min(self.len());
        (self.subset(&idx[..k], self.split), self.subset(&idx[k..], rest))
    }

    /// Per-feature standardization to zero mean and unit variance.
    pub fn standardize(&mut self) {
        let n = self.len();
        if n == 0 {
            return;
        }
        for j in 0..self.dim {
            let col = || (0..n).map(|i| self.inputs[i * self.dim + j]);
            let mean = col().sum::<f64>() / n as f64;
            let var = col().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                let x = &mut self.inputs[i * self.dim + j];
                *x = (*x - mean) / sd;
            }
        }
    }
}

/// Isotropic Gaussian blobs with unit spread whose centers sit 10 apart.
///
/// Centers are placed on signed coordinate axes, so the separation holds
/// whenever `classes <= 2 * d`; extra classes move out to further shells.
/// Labels are assigned round-robin before shuffling, so class counts differ
/// by at most one. Features are standardized.
pub fn make_blobs(n: usize, classes: usize, d: usize, seed: u64) -> Result<Dataset, ModelError> {
    if classes < 2 || n < classes || d == 0 {
        return Err(ModelError::InvalidSpec(format!(
            "blobs need n >= classes >= 2 and d >= 1 (n={n}, classes={classes}, d={d})"
        )));
    }
    let separation = 10.0;
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let axis = c % d;
            let sign = if (c / d).is_multiple_of(2) { 1.0 } else { -1.0 };
            let shell = (c / (2 * d)) as f64 + 1.0;
            let mut center = vec![0.0; d];
            center[axis] = sign * radius * shell;
            center
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(n * d);
    for &c in &labels {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            inputs.push(centers[c][j] + z);
        }
    }
    let mut ds = Dataset::new(inputs, d, Labels::Classes(labels), Split::Train)?;
    ds.standardize();
    Ok(ds)
}

/// Two interleaving half circles with Gaussian noise, standardized.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset, ModelError> {
    if n < 2 {
        return Err(ModelError::InvalidSpec("two moons need at least 2 samples".into()));
    }
    let n_outer = n - n / 2;
    let n_inner = n / 2;
    let lin = |k: usize, i: usize| if k > 1 { PI * i as f64 / (k - 1) as f64 } else { 0.0 };
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = lin(n_outer, i);
        rows.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = lin(n_inner, i);
        rows.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (p, c) in rows {
        for x in p {
            let z: f64 = rng.sample(StandardNormal);
            inputs.push(x + noise * z);
        }
        labels.push(c);
    }
    let mut ds = Dataset::new(inputs, 2, Labels::Classes(labels), Split::Train)?;
    ds.standardize();
    Ok(ds)
}

/// Index batches for one epoch, shuffled by `(seed, epoch)`. The last
/// partial batch is kept.
pub fn minibatches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<usize>>, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(ModelError::InvalidSpec("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(batches.into_iter())
}
