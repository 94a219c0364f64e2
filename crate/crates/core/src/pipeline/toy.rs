//! Synthetic differentiable models with planted teachers.
//!
//! `Linear` is a single dense map trained with squared error. Its dataset pairs
//! every input with targets `teacher(x) ± σ e_j` for each output `j`, so the
//! least-squares optimum is exactly the teacher, the full-batch gradient there
//! is zero, and with `σ² = outputs` the empirical Fisher of the per-sample
//! gradients equals the loss Hessian. The second-order pruning model is then
//! exact up to the dampening term.
//!
//! `Mlp` is dense → tanh → dense with Gaussian label noise. With squared error the
//! empirical Fisher is `E[r rᵀ]`-weighted Gauss-Newton curvature, so the default
//! noise has unit variance to keep the two on the same scale. Nothing is exact
//! there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::linalg::dot;
use crate::tensorstore::{GradientSet, TensorContainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    /// `[in, out]` for a linear model, `[in, hidden, out]` for an MLP.
    pub dims: Vec<usize>,
    /// Distinct inputs drawn; the linear dataset has `2 · out` samples per input.
    pub inputs: usize,
    /// Strength of the random input mixing; 0 gives independent features.
    pub correlation: f64,
    /// Standard deviation of the MLP label noise.
    pub noise: f64,
}

impl ToyConfig {
    pub fn new(seed: u64, dims: Vec<usize>) -> Self {
        Self {
            seed,
            dims,
            inputs: 256,
            correlation: 0.3,
            noise: 1.0,
        }
    }

    pub fn kind(&self) -> Result<ToyKind> {
        match self.dims.len() {
            2 => Ok(ToyKind::Linear),
            3 => Ok(ToyKind::Mlp),
            _ => Err(Error::Config(format!(
                "toy dims must be in x out or in x hidden x out, got {:?}",
                self.dims
            ))),
        }
    }
}

/// Parses `"16x4"` or `"16x32x4"`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config(format!("bad dims `{s}`")))?;
    if !(2..=3).contains(&dims.len()) {
        return Err(Error::Config(format!("dims `{s}` must have two or three parts")));
    }
    Ok(dims)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: usize,
    pub outputs: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len() / self.inputs
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.inputs..(i + 1) * self.inputs]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.y[i * self.outputs..(i + 1) * self.outputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub kind: ToyKind,
    pub layers: Vec<Layer>,
    pub data: Dataset,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

impl ToyModel {
    pub fn build(cfg: &ToyConfig) -> Result<Self> {
        let kind = cfg.kind()?;
        if cfg.inputs == 0 {
            return Err(Error::Config("toy dataset needs at least one input".into()));
        }
        let d_in = cfg.dims[0];
        let d_out = *cfg.dims.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // x = (I + c·G/√in) z
        let mix: Vec<f64> = (0..d_in * d_in)
            .map(|k| {
                let eye = if k / d_in == k % d_in { 1.0 } else { 0.0 };
                eye + cfg.correlation * gaussian(&mut rng) / (d_in as f64).sqrt()
            })
            .collect();
        let base: Vec<Vec<f64>> = (0..cfg.inputs)
            .map(|_| {
                let z: Vec<f64> = (0..d_in).map(|_| gaussian(&mut rng)).collect();
                matvec(&mix, d_in, d_in, &z)
            })
            .collect();
        let (layers, data) = match kind {
            ToyKind::Linear => {
                let teacher: Vec<f64> = (0..d_out * d_in).map(|_| gaussian(&mut rng)).collect();
                let sigma = (d_out as f64).sqrt();
                let mut x = Vec::new();
                let mut y = Vec::new();
                for xb in &base {
                    let clean = matvec(&teacher, d_out, d_in, xb);
                    for j in 0..d_out {
                        for sign in [1.0, -1.0] {
                            x.extend_from_slice(xb);
                            let mut t = clean.clone();
                            t[j] += sign * sigma;
                            y.extend(t);
                        }
                    }
                }
                let layers = vec![Layer::new("0", vec![d_out, d_in], vec![0.0; d_out * d_in])];
                (
                    layers,
                    Dataset {
                        inputs: d_in,
                        outputs: d_out,
                        x,
                        y,
                    },
                )
            }
            ToyKind::Mlp => {
                let h = cfg.dims[1];
                let s1 = 1.0 / (d_in as f64).sqrt();
                let s2 = 1.0 / (h as f64).sqrt();
                let t1: Vec<f64> = (0..h * d_in).map(|_| 2.0 * s1 * gaussian(&mut rng)).collect();
                let t2: Vec<f64> = (0..d_out * h).map(|_| 2.0 * s2 * gaussian(&mut rng)).collect();
                let mut x = Vec::new();
                let mut y = Vec::new();
                for xb in &base {
                    let hid: Vec<f64> = matvec(&t1, h, d_in, xb).into_iter().map(f64::tanh).collect();
                    let out = matvec(&t2, d_out, h, &hid);
                    x.extend_from_slice(xb);
                    y.extend(out.into_iter().map(|v| v + cfg.noise * gaussian(&mut rng)));
                }
                let w1: Vec<f64> = (0..h * d_in).map(|_| 0.5 * s1 * rng.random_range(-1.0..1.0)).collect();
                let w2: Vec<f64> = (0..d_out * h).map(|_| 0.5 * s2 * rng.random_range(-1.0..1.0)).collect();
                let layers = vec![Layer::new("0", vec![h, d_in], w1), Layer::new("1", vec![d_out, h], w2)];
                (
                    layers,
                    Dataset {
                        inputs: d_in,
                        outputs: d_out,
                        x,
                        y,
                    },
                )
            }
        };
        Ok(Self { kind, layers, data })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    fn forward(&self, x: &[f64]) -> (Option<Vec<f64>>, Vec<f64>) {
        match self.kind {
            ToyKind::Linear => {
                let l = &self.layers[0];
                (None, matvec(&l.weights, l.dims[0], l.dims[1], x))
            }
            ToyKind::Mlp => {
                let (l1, l2) = (&self.layers[0], &self.layers[1]);
                let hid: Vec<f64> = matvec(&l1.weights, l1.dims[0], l1.dims[1], x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let out = matvec(&l2.weights, l2.dims[0], l2.dims[1], &hid);
                (Some(hid), out)
            }
        }
    }

    pub fn sample_loss(&self, i: usize) -> f64 {
        let (_, out) = self.forward(self.data.x(i));
        0.5 * out
            .iter()
            .zip(self.data.y(i))
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
    }

    /// Mean per-sample loss over the whole dataset.
    pub fn loss(&self) -> f64 {
        let n = self.data.len();
        (0..n).map(|i| self.sample_loss(i)).sum::<f64>() / n as f64
    }

    /// Adds `scale · ∇ℓᵢ` into `acc` (one flattened vector per layer).
    fn add_sample_grad(&self, i: usize, scale: f64, acc: &mut [Vec<f64>]) {
        let x = self.data.x(i);
        let (hid, out) = self.forward(x);
        let r: Vec<f64> = out.iter().zip(self.data.y(i)).map(|(p, t)| scale * (p - t)).collect();
        let add_outer = |acc: &mut [f64], a: &[f64], b: &[f64]| {
            for (row, &u) in acc.chunks_mut(b.len()).zip(a) {
                row.iter_mut().zip(b).for_each(|(o, &v)| *o += u * v);
            }
        };
        match hid {
            None => add_outer(&mut acc[0], &r, x),
            Some(hid) => {
                let l2 = &self.layers[1];
                let (rows, cols) = (l2.dims[0], l2.dims[1]);
                let da: Vec<f64> = (0..cols)
                    .map(|h| {
                        let dz: f64 = (0..rows).map(|o| l2.weights[o * cols + h] * r[o]).sum();
                        dz * (1.0 - hid[h] * hid[h])
                    })
                    .collect();
                add_outer(&mut acc[0], &da, x);
                add_outer(&mut acc[1], &r, &hid);
            }
        }
    }

    /// Gradient of sample `i`'s loss, one flattened vector per layer.
    pub fn sample_grad(&self, i: usize) -> Vec<Vec<f64>> {
        let mut acc: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.len()]).collect();
        self.add_sample_grad(i, 1.0, &mut acc);
        acc
    }

    /// Full-batch gradient per layer.
    pub fn batch_grad(&self) -> Vec<Vec<f64>> {
        let n = self.data.len();
        let mut acc: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.len()]).collect();
        for i in 0..n {
            self.add_sample_grad(i, 1.0, &mut acc);
        }
        acc.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v /= n as f64));
        acc
    }

    /// Norm of the full-batch gradient restricted to unmasked weights.
    pub fn grad_norm(&self) -> f64 {
        self.batch_grad()
            .iter()
            .zip(&self.layers)
            .flat_map(|(g, l)| g.iter().zip(&l.mask).filter(|(_, &m)| m == 1).map(|(v, _)| v * v))
            .sum::<f64>()
            .sqrt()
    }

    /// One full-batch gradient step; masked weights stay at zero.
    pub fn step(&mut self, lr: f64) {
        let grads = self.batch_grad();
        for (l, g) in self.layers.iter_mut().zip(grads) {
            for ((w, gi), &m) in l.weights.iter_mut().zip(g).zip(&l.mask) {
                if m == 1 {
                    *w -= lr * gi;
                } else {
                    *w = 0.0;
                }
            }
        }
    }

    /// Replaces weights and masks with those of `layers` (same shapes).
    pub fn set_layers(&mut self, layers: Vec<Layer>) {
        debug_assert_eq!(layers.len(), self.layers.len());
        self.layers = layers;
    }

    pub fn with_layers(&self, layers: &[Layer]) -> Self {
        let mut m = self.clone();
        m.layers = layers.to_vec();
        m
    }

    /// Weight (plus mask and prunability) container for the current state.
    pub fn weights_container(&self) -> TensorContainer {
        crate::layers::layers_to_container(&self.layers, None)
    }

    /// Gradient container with the first `n` per-sample gradients of every layer.
    pub fn grads_container(&self, n: usize) -> TensorContainer {
        let mut c = TensorContainer::new();
        for g in collect_grads(self, n) {
            c.set(crate::tensorstore::keys::grads(g.layer()), g.to_tensor());
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Full-batch gradient descent from the model's current weights.
pub fn toy_train(model: &mut ToyModel, steps: usize, lr: f64) -> Result<TrainReport> {
    for step in 0..steps {
        model.step(lr);
        if step % 64 == 63 || step + 1 == steps {
            let loss = model.loss();
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
        }
    }
    let loss = model.loss();
    if !loss.is_finite() {
        return Err(Error::Diverged { step: steps, loss });
    }
    Ok(TrainReport {
        steps,
        loss,
        grad_norm: model.grad_norm(),
    })
}

/// Per-sample gradients of the first `n` samples (clamped to the dataset size),
/// in dataset order, one set per layer.
pub fn collect_grads(model: &ToyModel, n: usize) -> Vec<GradientSet> {
    let n = n.clamp(1, model.data.len());
    let mut rows: Vec<Vec<f64>> = model.layers.iter().map(|l| Vec::with_capacity(n * l.len())).collect();
    for i in 0..n {
        for (acc, g) in rows.iter_mut().zip(model.sample_grad(i)) {
            acc.extend(g);
        }
    }
    model
        .layers
        .iter()
        .zip(rows)
        .map(|(l, r)| GradientSet::new(l.name.clone(), n, l.len(), r).expect("consistent shapes"))
        .collect()
}
