//! Trainable feature encoder: a ReLU multilayer perceptron with a linear
//! output layer, explicit backward pass and momentum SGD.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    sizes: Vec<usize>,
    /// `weights[l]` is `sizes[l + 1] × sizes[l]`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    version: u64,
}

/// Layer activations recorded by [`EncoderParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// `inputs[l]` is the input to layer `l`; `inputs[0] == x`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// `∂L/∂x`, for diagnostics.
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Gradients {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; params.input_dim()],
        }
    }

    /// `self += other`, in fixed layer/parameter order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            numerics::axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            numerics::axpy(1.0, b, a);
        }
        numerics::axpy(1.0, &other.input, &mut self.input);
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
        self.input.iter_mut().for_each(|v| *v *= s);
    }
}

impl EncoderParams {
    /// Layers initialized uniformly in `±1/√fan_in`.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(EncoderParams {
            sizes: sizes.to_vec(),
            weights,
            biases,
            version: 0,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(EncoderParams {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|p| Matrix::zeros(p[1], p[0])).collect(),
            biases: sizes.windows(2).map(|p| vec![0.0; p[1]]).collect(),
            version: 0,
        })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("need one bias per weight matrix"));
        }
        let mut sizes = vec![weights[0].cols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.cols() != *sizes.last().expect("nonempty") || b.len() != w.rows() {
                return Err(Error::invalid("layer shapes do not chain"));
            }
            sizes.push(w.rows());
        }
        validate_sizes(&sizes)?;
        Ok(EncoderParams {
            sizes,
            weights,
            biases,
            version: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Bumped on every parameter update; caches from older versions are stale.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks params as modified outside [`sgd_step`].
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "encoder input has dim {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut h = w.matvec(&a)?;
            numerics::axpy(1.0, b, &mut h);
            let out = if l == last {
                h.clone()
            } else {
                h.iter().map(|&v| v.max(0.0)).collect()
            };
            inputs.push(std::mem::replace(&mut a, out));
            pre.push(h);
        }
        Ok((
            a,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Just the output `z`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(z, _)| z)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_z: &[f64]) -> Result<Gradients> {
        if cache.version != self.version || cache.inputs.len() != self.num_layers() {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if grad_z.len() != self.output_dim() {
            return Err(Error::invalid("grad_z dim does not match encoder output"));
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.num_layers() - 1;
        let mut delta = grad_z.to_vec();
        for l in (0..self.num_layers()).rev() {
            if l != last {
                for (d, &h) in delta.iter_mut().zip(&cache.pre[l]) {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[l];
            let gw = &mut grads.weights[l];
            for (r, &dr) in delta.iter().enumerate() {
                for (g, &a) in gw.row_mut(r).iter_mut().zip(input) {
                    *g = dr * a;
                }
            }
            grads.biases[l].copy_from_slice(&delta);
            delta = self.weights[l].t_matvec(&delta)?;
        }
        grads.input = delta;
        Ok(grads)
    }

    fn format_checkpoint(&self) -> String {
        let mut out = String::from("#encoder v1\nsizes");
        for s in &self.sizes {
            write!(out, " {s}").expect("string write");
        }
        out.push('\n');
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            write!(out, "w {l}").expect("string write");
            for v in w.as_slice() {
                write!(out, " {v:e}").expect("string write");
            }
            write!(out, "\nb {l}").expect("string write");
            for v in b {
                write!(out, " {v:e}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Checkpoint text: a `#encoder v1` header, a `sizes` line, then one `w <l>`
    /// (row-major) and one `b <l>` line per layer, all values in shortest
    /// round-trip `f64` notation.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.format_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text, &path.display().to_string())
    }

    pub fn parse_checkpoint(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::parse(origin, line, msg);
        match lines.next() {
            Some((_, "#encoder v1")) => {}
            _ => return Err(bad(1, "missing #encoder v1 header")),
        }
        let (i, sizes_line) = lines.next().ok_or_else(|| bad(2, "missing sizes line"))?;
        let sizes: Vec<usize> = sizes_line
            .strip_prefix("sizes ")
            .ok_or_else(|| bad(i + 1, "expected sizes line"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(i + 1, "bad layer size")))
            .collect::<Result<_>>()?;
        validate_sizes(&sizes).map_err(|e| bad(i + 1, &e.to_string()))?;
        let mut params = EncoderParams::zeros(&sizes)?;
        for l in 0..params.num_layers() {
            for (tag, len) in [("w", sizes[l] * sizes[l + 1]), ("b", sizes[l + 1])] {
                let (i, line) = lines
                    .next()
                    .ok_or_else(|| bad(0, &format!("missing {tag} {l} line")))?;
                let prefix = format!("{tag} {l}");
                let rest = line
                    .strip_prefix(&prefix)
                    .ok_or_else(|| bad(i + 1, &format!("expected {prefix}")))?;
                let vals: Vec<f64> = rest
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad(i + 1, "bad float")))
                    .collect::<Result<_>>()?;
                if vals.len() != len {
                    return Err(bad(i + 1, &format!("expected {len} values, got {}", vals.len())));
                }
                if tag == "w" {
                    params.weights[l].as_mut_slice().copy_from_slice(&vals);
                } else {
                    params.biases[l] = vals;
                }
            }
        }
        Ok(params)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("encoder needs at least an input and an output size"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("encoder layer sizes must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// `(epoch, multiplier)`: from `epoch` on, the rate is multiplied by
    /// `multiplier`. Multipliers compound.
    pub schedule: Vec<(usize, f64)>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            schedule: vec![(50, 0.1), (75, 0.1)],
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| epoch >= *e)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    vel_w: Vec<Matrix>,
    vel_b: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: OptimConfig, params: &EncoderParams) -> Self {
        let z = Gradients::zeros_like(params);
        OptimState {
            config,
            vel_w: z.weights,
            vel_b: z.biases,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.config.lr_at(epoch)
    }
}

/// `v ← momentum · v + g`, `p ← p − lr(epoch) · v`.
pub fn sgd_step(params: &mut EncoderParams, grads: &Gradients, opt: &mut OptimState, epoch: usize) {
    let lr = opt.lr_at(epoch);
    let mu = opt.config.momentum;
    for l in 0..params.num_layers() {
        let v = opt.vel_w[l].as_mut_slice();
        for (vi, gi) in v.iter_mut().zip(grads.weights[l].as_slice()) {
            *vi = mu * *vi + gi;
        }
        numerics::axpy(-lr, opt.vel_w[l].as_slice(), params.weights[l].as_mut_slice());
        for (vi, gi) in opt.vel_b[l].iter_mut().zip(&grads.biases[l]) {
            *vi = mu * *vi + gi;
        }
        numerics::axpy(-lr, &opt.vel_b[l], &mut params.biases[l]);
    }
    params.version += 1;
}
