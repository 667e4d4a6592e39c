//! Toy float MLP, synthetic data and an in-repo trainer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Input dimension (crossbar rows).
    pub rows: usize,
    /// Output dimension (crossbar columns).
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl DenseLayer {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (row, &xi) in self.weights.chunks_exact(self.cols).zip(x) {
            for (acc, &w) in y.iter_mut().zip(row) {
                *acc += w * xi;
            }
        }
        if self.relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        y
    }
}

/// Seed of the synthetic blob data a model was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub layers: Vec<DenseLayer>,
    pub input_dim: usize,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ToyModel {
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::InvalidConfig("model has no layers".into()));
        };
        let mut dim = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.rows != dim || l.weights.len() != l.rows * l.cols || l.bias.len() != l.cols {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: {}x{} with {} weights and {} biases, expected {dim} inputs",
                    l.rows,
                    l.cols,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if let Some(j) = l.weights.iter().chain(&l.bias).position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(j));
            }
            dim = l.cols;
        }
        if last.relu {
            return Err(Error::InvalidConfig("final layer must not apply ReLU".into()));
        }
        if dim != self.classes {
            return Err(Error::DimensionMismatch(format!(
                "final layer has {dim} outputs for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.layers.iter().fold(x.to_vec(), |h, l| l.forward(&h))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = data
            .iter()
            .filter(|(x, y)| self.predict(x) == *y)
            .count();
        correct as f64 / data.len() as f64
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    /// Row-major `len x dim`.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.dim == 0 || self.inputs.len() != self.dim * self.labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} samples of dimension {}",
                self.inputs.len(),
                self.labels.len(),
                self.dim
            )));
        }
        if let Some(i) = self.inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidConfig(format!("label {y} outside {classes} classes")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }
}

/// Gaussian-blob classification problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub train: usize,
    pub test: usize,
    /// Distance of every class centre from the origin. Centres lie on
    /// orthonormal random directions, so all pairs are `sqrt(2)` times this
    /// apart and difficulty does not vary with the seed.
    pub center_radius: f64,
    /// Within-class standard deviation per coordinate.
    pub noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 4,
            dim: 16,
            train: 2000,
            test: 500,
            center_radius: 3.6,
            noise: 1.0,
        }
    }
}

/// `count` random orthonormal vectors of length `dim` (Gram-Schmidt on
/// Gaussian draws), flattened row-major.
fn orthonormal_rows(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows: Vec<f64> = Vec::with_capacity(count * dim);
    while rows.len() < count * dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in rows.chunks_exact(dim) {
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, a)| *x -= dot * a);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Redraw the (measure-zero) near-dependent case.
        if norm > 1e-6 {
            rows.extend(v.iter().map(|x| x / norm));
        }
    }
    rows
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > self.dim {
            return Err(Error::InvalidConfig(format!(
                "{} classes need 1..={} orthogonal centres",
                self.classes, self.dim
            )));
        }
        if !(self.center_radius.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidConfig("blob radius and noise must be finite".into()));
        }
        Ok(())
    }

    /// Train and test splits drawn from the same class centres.
    ///
    /// Panics if the spec does not [`validate`](Self::validate).
    pub fn generate(&self, seed: u64) -> (Dataset, Dataset) {
        self.validate().expect("invalid blob spec");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise).expect("finite noise");
        let centres = orthonormal_rows(self.classes, self.dim, &mut rng)
            .into_iter()
            .map(|v| v * self.center_radius)
            .collect::<Vec<f64>>();
        let mut draw = |count: usize| {
            let mut data = Dataset {
                dim: self.dim,
                inputs: Vec::with_capacity(count * self.dim),
                labels: Vec::with_capacity(count),
            };
            for i in 0..count {
                let y = i % self.classes;
                let c = &centres[y * self.dim..(y + 1) * self.dim];
                data.inputs.extend(c.iter().map(|&m| m + noise.sample(&mut rng)));
                data.labels.push(y);
            }
            data
        };
        let train = draw(self.train);
        let test = draw(self.test);
        (train, test)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Minimum clean float test accuracy.
    pub accuracy_floor: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            hidden: 32,
            epochs: 60,
            batch: 32,
            learning_rate: 0.05,
            accuracy_floor: 0.95,
        }
    }
}

/// Trains `dim -> hidden -> classes` with ReLU and softmax cross-entropy by
/// mini-batch gradient descent.
pub fn train_mlp(train: &Dataset, classes: usize, spec: &TrainSpec, seed: u64) -> ToyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h, c) = (train.dim, spec.hidden, classes);
    let mut init = |fan_in: usize, n: usize| -> Vec<f64> {
        let std = (2.0 / fan_in as f64).sqrt();
        (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut w1 = init(d, d * h);
    let mut w2 = init(h, h * c);
    let (mut b1, mut b2) = (vec![0.0; h], vec![0.0; c]);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut gw1, mut gw2) = (vec![0.0; d * h], vec![0.0; h * c]);
    let (mut gb1, mut gb2) = (vec![0.0; h], vec![0.0; c]);
    let mut hidden = vec![0.0; h];
    let mut logits = vec![0.0; c];
    let mut dh = vec![0.0; h];

    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch) {
            gw1.iter_mut().chain(&mut gw2).chain(&mut gb1).chain(&mut gb2).for_each(|g| *g = 0.0);
            for &i in batch {
                let x = train.sample(i);
                hidden.copy_from_slice(&b1);
                for (row, &xi) in w1.chunks_exact(h).zip(x) {
                    for (a, &w) in hidden.iter_mut().zip(row) {
                        *a += w * xi;
                    }
                }
                hidden.iter_mut().for_each(|v| *v = v.max(0.0));
                logits.copy_from_slice(&b2);
                for (row, &hi) in w2.chunks_exact(c).zip(&hidden) {
                    for (a, &w) in logits.iter_mut().zip(row) {
                        *a += w * hi;
                    }
                }
                // Softmax cross-entropy gradient: p - onehot.
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                logits.iter_mut().for_each(|v| {
                    *v = (*v - max).exp();
                    z += *v;
                });
                logits.iter_mut().for_each(|v| *v /= z);
                logits[train.labels[i]] -= 1.0;

                dh.iter_mut().for_each(|v| *v = 0.0);
                for (j, (&hj, row)) in hidden.iter().zip(w2.chunks_exact(c)).enumerate() {
                    for (k, (&g, &w)) in logits.iter().zip(row).enumerate() {
                        gw2[j * c + k] += g * hj;
                        dh[j] += g * w;
                    }
                }
                gb2.iter_mut().zip(&logits).for_each(|(a, g)| *a += g);
                for (dj, &hj) in dh.iter_mut().zip(&hidden) {
                    if hj <= 0.0 {
                        *dj = 0.0;
                    }
                }
                for (r, &xi) in x.iter().enumerate() {
                    for (j, &g) in dh.iter().enumerate() {
                        gw1[r * h + j] += g * xi;
                    }
                }
                gb1.iter_mut().zip(&dh).for_each(|(a, g)| *a += g);
            }
            let step = spec.learning_rate / batch.len() as f64;
            for (p, g) in w1
                .iter_mut()
                .zip(&gw1)
                .chain(w2.iter_mut().zip(&gw2))
                .chain(b1.iter_mut().zip(&gb1))
                .chain(b2.iter_mut().zip(&gb2))
            {
                *p -= step * g;
            }
        }
    }

    ToyModel {
        layers: vec![
            DenseLayer {
                rows: d,
                cols: h,
                weights: w1,
                bias: b1,
                relu: true,
            },
            DenseLayer {
                rows: h,
                cols: c,
                weights: w2,
                bias: b2,
                relu: false,
            },
        ],
        input_dim: d,
        classes: c,
        dataset: None,
        provenance: None,
    }
}

/// A trained toy model together with the data it was trained and tested on.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    pub model: ToyModel,
    pub train: Dataset,
    pub test: Dataset,
    pub float_accuracy: f64,
}

/// Generates the default blob problem from `seed` and trains the default MLP on it.
pub fn train_toy(seed: u64) -> Result<ToyProblem> {
    train_toy_with(seed, &BlobSpec::default(), &TrainSpec::default())
}

pub fn train_toy_with(seed: u64, blobs: &BlobSpec, spec: &TrainSpec) -> Result<ToyProblem> {
    blobs.validate()?;
    let (train, test) = blobs.generate(seed);
    let mut model = train_mlp(&train, blobs.classes, spec, crate::faults::derive_seed(seed, 0x7472));
    model.dataset = Some(DatasetRef { seed });
    let float_accuracy = model.accuracy(&test);
    if float_accuracy < spec.accuracy_floor {
        return Err(Error::TrainingDiverged {
            accuracy: float_accuracy,
            floor: spec.accuracy_floor,
        });
    }
    Ok(ToyProblem {
        model,
        train,
        test,
        float_accuracy,
    })
}
