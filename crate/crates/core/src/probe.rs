//! Toy objectives with known curvature, used to feed [`crate::gain`] with
//! exact or finite-difference blocks.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::gain::{Hessian, LayerCurvature};

/// Separable quadratic `L(theta) = sum_k (theta_k - theta*_k).A_k.(theta_k - theta*_k) / 2`.
#[derive(Debug, Clone)]
pub struct BlockQuadratic {
    blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
    offsets: Vec<usize>,
    theta: Vec<f64>,
}

impl BlockQuadratic {
    pub fn new(blocks: Vec<(DMatrix<f64>, DVector<f64>)>, theta: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid("blocks", "at least one block is required"));
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for (k, (a, star)) in blocks.iter().enumerate() {
            let p = star.len();
            if p == 0 || a.nrows() != p || a.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "block {k}: A is {}x{}, theta* has {p} entries",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a != &a.transpose() {
                return Err(invalid(format!("block {k}"), "A is not symmetric"));
            }
            if Cholesky::new(a.clone()).is_none() {
                return Err(Error::NotPositiveDefinite);
            }
            offsets.push(offsets[k] + p);
        }
        if theta.len() != offsets[blocks.len()] {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, blocks need {}",
                theta.len(),
                offsets[blocks.len()]
            )));
        }
        Ok(Self {
            blocks,
            offsets,
            theta,
        })
    }

    /// Random instance: `A_k = M^T M + I` with entries of `M` in `[-1, 1]`,
    /// `theta*` and `theta` in `[-1, 1]`.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(dims.len());
        let mut theta = Vec::new();
        for &p in dims {
            let m = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
            let a = m.transpose() * &m + DMatrix::identity(p, p);
            let star = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            theta.extend((0..p).map(|_| rng.gen_range(-1.0..1.0)));
            blocks.push((a, star));
        }
        Self::new(blocks, theta)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Coordinates of block `k` inside the full parameter vector.
    pub fn selector(&self, k: usize) -> Result<Vec<usize>> {
        self.check(k)?;
        Ok((self.offsets[k]..self.offsets[k + 1]).collect())
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, (a, star))| {
                let r = self.offsets[k]..self.offsets[k + 1];
                let delta = DVector::from_column_slice(&theta[r]) - star;
                0.5 * delta.dot(&(a * &delta))
            })
            .sum()
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.blocks.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.blocks.len(),
            });
        }
        Ok(())
    }
}

/// Exact gradient and Hessian of block `k`, with `tau = 0`.
pub fn quadratic_blocks(q: &BlockQuadratic, k: usize) -> Result<LayerCurvature> {
    q.check(k)?;
    let (a, star) = &q.blocks[k];
    let theta_k = DVector::from_column_slice(&q.theta[q.offsets[k]..q.offsets[k + 1]]);
    let g = a * (theta_k - star);
    LayerCurvature::new(g, Hessian::Dense(a.clone()), 0.0)
}

/// Hidden-layer nonlinearity of [`TinyMlp`]. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Number of samples in the generated dataset.
pub const MLP_SAMPLES: usize = 32;

/// Largest parameter count accepted.
pub const MLP_MAX_PARAMS: usize = 512;

/// Small fully connected regression network with squared loss
/// `sum_i |f(x_i) - y_i|^2 / (2N)`.
///
/// Parameters are laid out layer by layer, each layer as its row-major weight
/// matrix followed by its bias; one layer is one block.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    weights: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    seed: u64,
}

impl TinyMlp {
    /// Generates weights from `seed`, inputs from a Halton sequence on
    /// `[-1, 1]^d` and targets from a teacher network of the same shape.
    pub fn new(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let count = param_count(layer_dims)?;
        let student = init_weights(layer_dims, seed);
        let teacher = init_weights(layer_dims, seed ^ 0x9e37_79b9_7f4a_7c15);
        let inputs: Vec<Vec<f64>> = (0..MLP_SAMPLES)
            .map(|i| (0..layer_dims[0]).map(|j| 2.0 * halton(i + 1, PRIMES[j % PRIMES.len()]) - 1.0).collect())
            .collect();
        debug_assert_eq!(student.len(), count);
        let targets = inputs
            .iter()
            .map(|x| forward(layer_dims, activation, &teacher, x))
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            weights: student,
            inputs,
            targets,
            seed,
        })
    }

    /// Builds a network from explicit weights and data.
    pub fn from_parts(
        layer_dims: &[usize],
        activation: Activation,
        weights: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let count = param_count(layer_dims)?;
        if weights.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "expected {count} weights, got {}",
                weights.len()
            )));
        }
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(invalid("dataset", "inputs and targets must be non-empty and of equal length"));
        }
        let d_in = layer_dims[0];
        let d_out = *layer_dims.last().unwrap();
        if inputs.iter().any(|x| x.len() != d_in) || targets.iter().any(|y| y.len() != d_out) {
            return Err(Error::DimensionMismatch("sample width does not match layer_dims".into()));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            weights,
            inputs,
            targets,
            seed: 0,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Parameter range of layer `k`.
    pub fn block_range(&self, k: usize) -> Result<Range<usize>> {
        if k >= self.num_layers() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.num_layers(),
            });
        }
        let start: usize = (0..k).map(|l| layer_params(&self.layer_dims, l)).sum();
        Ok(start..start + layer_params(&self.layer_dims, k))
    }

    pub fn predict(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        forward(&self.layer_dims, self.activation, weights, x)
    }

    pub fn loss(&self, weights: &[f64]) -> f64 {
        let total: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| {
                self.predict(weights, x)
                    .iter()
                    .zip(y)
                    .map(|(f, t)| (f - t) * (f - t))
                    .sum::<f64>()
            })
            .sum();
        total / (2.0 * self.inputs.len() as f64)
    }

    /// Default finite-difference step: `eps^(1/4) * (1 + max |w|)`.
    pub fn default_fd_step(&self) -> f64 {
        let scale = self.weights.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
        f64::EPSILON.powf(0.25) * (1.0 + scale)
    }
}

/// Finite-difference gradient and symmetrized Hessian of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimate {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
}

impl BlockEstimate {
    /// Attaches a Tikhonov shift; fails if `H + tau I` is not positive definite.
    pub fn into_curvature(self, tau: f64) -> Result<LayerCurvature> {
        LayerCurvature::new(self.g, Hessian::Dense(self.h), tau)
    }
}

/// Central-difference gradient and Hessian of layer `k` at the network's weights.
pub fn mlp_blocks(m: &TinyMlp, k: usize, fd_step: f64) -> Result<BlockEstimate> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(invalid("fd_step", format!("must be > 0, got {fd_step}")));
    }
    let range = m.block_range(k)?;
    let p = range.len();
    let h = fd_step;
    let mut w = m.weights.clone();
    let eval = |w: &[f64]| -> Result<f64> {
        let v = m.loss(w);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("objective"))
        }
    };

    let f0 = eval(&w)?;
    let mut g = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut plus = vec![0.0; p];
    let mut minus = vec![0.0; p];
    for (i, idx) in range.clone().enumerate() {
        let orig = w[idx];
        w[idx] = orig + h;
        plus[i] = eval(&w)?;
        w[idx] = orig - h;
        minus[i] = eval(&w)?;
        w[idx] = orig;
        g[i] = (plus[i] - minus[i]) / (2.0 * h);
        hess[(i, i)] = (plus[i] - 2.0 * f0 + minus[i]) / (h * h);
    }
    for (i, a) in range.clone().enumerate() {
        for (j, b) in range.clone().enumerate().skip(i + 1) {
            let (wa, wb) = (w[a], w[b]);
            let mut at = |da: f64, db: f64| -> Result<f64> {
                w[a] = wa + da;
                w[b] = wb + db;
                let v = eval(&w);
                w[a] = wa;
                w[b] = wb;
                v
            };
            let v = (at(h, h)? - at(h, -h)? - at(-h, h)? + at(-h, -h)?) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    Ok(BlockEstimate { g, h: hess })
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `i` in base `b`.
fn halton(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

fn layer_params(dims: &[usize], l: usize) -> usize {
    dims[l + 1] * dims[l] + dims[l + 1]
}

fn param_count(dims: &[usize]) -> Result<usize> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(invalid("layer_dims", "need at least two non-zero widths"));
    }
    let count: usize = (0..dims.len() - 1).map(|l| layer_params(dims, l)).sum();
    if count > MLP_MAX_PARAMS {
        return Err(invalid(
            "layer_dims",
            format!("{count} parameters exceed the limit of {MLP_MAX_PARAMS}"),
        ));
    }
    Ok(count)
}

fn init_weights(dims: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::new();
    for l in 0..dims.len() - 1 {
        let scale = 1.0 / (dims[l] as f64).sqrt();
        w.extend((0..dims[l + 1] * dims[l]).map(|_| scale * rng.gen_range(-1.0..1.0)));
        w.extend((0..dims[l + 1]).map(|_| 0.1 * rng.gen_range(-1.0..1.0)));
    }
    w
}

fn forward(dims: &[usize], act: Activation, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    let last = dims.len() - 2;
    for l in 0..=last {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let weights = &w[off..off + n_out * n_in];
        let bias = &w[off + n_out * n_in..off + n_out * n_in + n_out];
        off += n_out * n_in + n_out;
        a = (0..n_out)
            .map(|o| {
                let z = bias[o] + (0..n_in).map(|i| weights[o * n_in + i] * a[i]).sum::<f64>();
                if l == last {
                    z
                } else {
                    act.apply(z)
                }
            })
            .collect();
    }
    a
}
