//! Dense rectifier networks with a softplus head.
//!
//! A network maps an input vector to one positive scalar:
//!
//! - hidden layers: `a = relu(W a_prev + b)`
//! - output layer: `z = w · a_last + c`, returned as `softplus(z)`
//!
//! Parameters live in one flat vector. Each layer contributes its row-major
//! `(out, in)` weight matrix followed by its bias vector, layers in order.
//! Reverse accumulation (`vjp`) returns exact partials with respect to the
//! input and to every parameter, which is what the adjoint solve consumes.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAM_FILE_VERSION: u32 = 1;

/// Overflow-free `ln(1 + e^z)`.
///
/// Uses `max(z, 0) + ln(1 + e^{-|z|})`, which is exact to rounding for every
/// finite `z` and strictly positive until `e^{-|z|}` underflows (beyond
/// `|z| ≈ 745`).
pub fn softplus(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::InvalidInput(format!("softplus of non-finite value {z}")));
    }
    Ok(softplus_unchecked(z))
}

#[inline]
pub(crate) fn softplus_unchecked(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of softplus.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Layer widths from input to the scalar output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    dims: Vec<usize>,
}

impl Architecture {
    /// `input_dim` inputs, the given hidden widths, one output.
    pub fn new(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::from_dims(dims)
    }

    pub fn from_dims(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("architecture needs at least an input and an output layer".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("all layer widths must be >= 1, got {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::Config(format!("output width must be 1, got {dims:?}")));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn n_hidden_units(&self) -> usize {
        self.hidden().iter().sum()
    }

    fn max_width(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }
}

/// Network parameters (θ) together with the architecture that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    arch: Architecture,
    weights: Vec<f64>,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ArchFile {
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamSetFile {
    version: u32,
    arch: ArchFile,
    weights: Vec<f64>,
    seed: Option<u64>,
}

impl ParamSet {
    /// Fan-in scaled uniform init: weights in `±sqrt(6 / fan_in)`, zero
    /// biases. Draws come from ChaCha8 seeded with `seed`, layer by layer in
    /// the flat parameter order.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(arch.n_params());
        for w in arch.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            weights.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            weights.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self {
            arch: arch.clone(),
            weights,
            seed: Some(seed),
        }
    }

    pub fn from_flat(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != arch.n_params() {
            return Err(Error::Shape {
                expected: arch.n_params(),
                got: weights.len(),
            });
        }
        Ok(Self {
            arch,
            weights,
            seed: None,
        })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            arch: arch.clone(),
            weights: vec![0.0; arch.n_params()],
            seed: None,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.weights
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.weights
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight matrix (row-major, `out × in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, fan_in, fan_out) = self.layer_offset(l);
        let w_end = off + fan_in * fan_out;
        (&self.weights[off..w_end], &self.weights[w_end..w_end + fan_out])
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let dims = &self.arch.dims;
        let off = dims[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (off, dims[l], dims[l + 1])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim() {
            return Err(Error::Shape {
                expected: self.arch.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// `h(input) = softplus(z)`.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        Ok(softplus_unchecked(self.forward_raw(input)?))
    }

    /// Output pre-activation `z`, before softplus.
    pub fn forward_raw(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        let mut acts = vec![0.0; self.arch.n_hidden_units()];
        Ok(self.forward_cached(input, &mut acts))
    }

    /// Cotangent-weighted partials of `h = softplus(z)`:
    /// `(c · ∂h/∂input, c · ∂h/∂θ)`.
    pub fn vjp(&self, input: &[f64], cotangent: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        let mut acts = vec![0.0; self.arch.n_hidden_units()];
        let z = self.forward_cached(input, &mut acts);
        let mut input_grad = vec![0.0; input.len()];
        let mut param_grad = vec![0.0; self.len()];
        self.backward_cached(
            input,
            &acts,
            cotangent * sigmoid(z),
            Some(&mut input_grad),
            &mut param_grad,
        );
        Ok((input_grad, param_grad))
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.arch.n_hidden_units()
    }

    /// Forward pass storing post-rectifier activations of every hidden layer
    /// into `acts` (length = total hidden units). Returns `z`.
    pub(crate) fn forward_cached(&self, input: &[f64], acts: &mut [f64]) -> f64 {
        let dims = &self.arch.dims;
        let n_layers = dims.len() - 1;
        let mut off = 0;
        let mut act_off = 0;
        let mut prev_off = 0;
        let mut z_out = 0.0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let w = &self.weights[off..off + fan_in * fan_out];
            let b = &self.weights[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            if l + 1 == n_layers {
                let prev: &[f64] = if l == 0 { input } else { &acts[prev_off..prev_off + fan_in] };
                z_out = b[0] + dot(w, prev);
            } else {
                let (done, rest) = acts.split_at_mut(act_off);
                let prev: &[f64] = if l == 0 { input } else { &done[prev_off..prev_off + fan_in] };
                let out = &mut rest[..fan_out];
                for (j, o) in out.iter_mut().enumerate() {
                    let z = b[j] + dot(&w[j * fan_in..(j + 1) * fan_in], prev);
                    *o = if z > 0.0 { z } else { 0.0 };
                }
                prev_off = act_off;
                act_off += fan_out;
            }
            off += fan_in * fan_out + fan_out;
        }
        z_out
    }

    /// Reverse pass for the raw output `z`. Adds `cot_z · ∂z/∂θ` into
    /// `param_grad` and, when requested, writes `cot_z · ∂z/∂input`.
    pub(crate) fn backward_cached(
        &self,
        input: &[f64],
        acts: &[f64],
        cot_z: f64,
        mut input_grad: Option<&mut [f64]>,
        param_grad: &mut [f64],
    ) {
        let dims = &self.arch.dims;
        let n_layers = dims.len() - 1;
        let width = self.arch.max_width().max(input.len());
        let mut delta = vec![0.0; 2 * width];
        let (cur, next) = delta.split_at_mut(width);
        let (mut cur, mut next) = (cur, next);
        cur[0] = cot_z;

        let mut off = self.weights.len();
        let mut act_end = self.arch.n_hidden_units();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            off -= fan_in * fan_out + fan_out;
            let w = &self.weights[off..off + fan_in * fan_out];
            let prev: &[f64] = if l == 0 { input } else { &acts[act_end - fan_in..act_end] };
            let (gw, gb) = param_grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let propagate = l > 0 || input_grad.is_some();
            let nx = &mut next[..fan_in];
            nx.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..fan_out {
                let d = cur[j];
                gb[j] += d;
                if d == 0.0 {
                    continue;
                }
                for (g, &p) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(prev) {
                    *g += d * p;
                }
                if propagate {
                    for (n, &wk) in nx.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *n += d * wk;
                    }
                }
            }
            if l == 0 {
                if let Some(ig) = input_grad.as_deref_mut() {
                    ig[..fan_in].copy_from_slice(nx);
                }
                break;
            }
            // rectifier: subgradient 0 at 0
            for (n, &p) in nx.iter_mut().zip(prev) {
                if p <= 0.0 {
                    *n = 0.0;
                }
            }
            std::mem::swap(&mut cur, &mut next);
            act_end -= fan_in;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ParamSetFile {
            version: PARAM_FILE_VERSION,
            arch: ArchFile {
                dims: self.arch.dims.clone(),
            },
            weights: self.weights.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ParamSetFile = serde_json::from_str(s)?;
        if file.version != PARAM_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter file version {} (expected {PARAM_FILE_VERSION})",
                file.version
            )));
        }
        let mut p = Self::from_flat(Architecture::from_dims(file.arch.dims)?, file.weights)?;
        p.seed = file.seed;
        Ok(p)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}
