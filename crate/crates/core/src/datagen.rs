//! Synthetic "polysemy world" and ingestion of precomputed feature files.
//!
//! Each class owns `M_c` unit-norm mode centroids in the latent space `R^d`.
//! Inputs are `x = R (μ_{c,k} + latent noise) + input noise` where `R` is a
//! fixed `n_in × d` map with orthonormal columns, so a linear encoder equal
//! to `Rᵀ` recovers the centroids exactly when the noise is zero.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{self, load_embedding_file};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// Smallest norm the mean of a class's centroids may have, so the bare
/// class-name prompt stays embeddable.
const MIN_CLASS_MEAN_NORM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    /// Modes per class; its length is the number of classes.
    pub modes: Vec<usize>,
    /// Latent (and prototype) dimension `d`.
    pub dim: usize,
    /// Encoder input dimension `n_in`.
    pub input_dim: usize,
    pub latent_noise: f64,
    pub input_noise: f64,
    pub train_per_mode: usize,
    pub test_per_mode: usize,
    /// Cap on pairwise centroid cosine within a class.
    pub max_mode_cosine: f64,
    pub max_retries: usize,
}

impl WorldSpec {
    pub fn uniform(num_classes: usize, modes_per_class: usize, dim: usize, input_dim: usize) -> Self {
        WorldSpec {
            modes: vec![modes_per_class; num_classes],
            dim,
            input_dim,
            latent_noise: 0.3,
            input_noise: 0.05,
            train_per_mode: 50,
            test_per_mode: 25,
            max_mode_cosine: 0.9,
            max_retries: 1000,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.modes.len()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.modes.is_empty() {
            out.push("data.num_classes must be positive".into());
        }
        if self.modes.contains(&0) {
            out.push("data.modes_per_class must be >= 1".into());
        }
        if self.dim == 0 {
            out.push("data.dim must be positive".into());
        }
        if self.input_dim < self.dim {
            out.push(format!(
                "data.input_dim ({}) must be >= data.dim ({})",
                self.input_dim, self.dim
            ));
        }
        for (name, v) in [("latent_noise", self.latent_noise), ("input_noise", self.input_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("data.{name} must be >= 0, got {v}"));
            }
        }
        if self.train_per_mode == 0 || self.test_per_mode == 0 {
            out.push("data.train_per_mode and data.test_per_mode must be positive".into());
        }
        if !(self.max_mode_cosine > -1.0 && self.max_mode_cosine <= 1.0) {
            out.push(format!(
                "data.max_mode_cosine must be in (-1, 1], got {}",
                self.max_mode_cosine
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub seed: u64,
    /// `centroids[c][k]` is the unit-norm centroid of mode `k` of class `c`.
    pub centroids: Vec<Vec<Vec<f64>>>,
    /// `n_in × d`, orthonormal columns.
    pub input_map: Matrix,
    pub class_names: Vec<String>,
}

impl SyntheticWorld {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn modes(&self, class_id: usize) -> usize {
        self.centroids[class_id].len()
    }

    /// Sense labels for class `c`: one per mode, each with its `(c, k)` tag.
    /// Unimodal classes report no senses.
    pub fn senses(&self, class_id: usize) -> Vec<(String, String)> {
        let m = self.modes(class_id);
        if m < 2 {
            return Vec::new();
        }
        (0..m)
            .map(|k| (format!("mode {k}"), embedding::mode_tag(class_id, k)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub label: usize,
    /// Ground-truth mode; never shown to training.
    pub mode_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        if let Ok(u) = numerics::normalize(&v) {
            return u;
        }
    }
}

fn draw_class_modes(rng: &mut impl Rng, spec: &WorldSpec, m: usize) -> Option<Vec<Vec<f64>>> {
    'retry: for _ in 0..spec.max_retries.max(1) {
        let modes: Vec<Vec<f64>> = (0..m).map(|_| random_unit(rng, spec.dim)).collect();
        for i in 0..m {
            for j in i + 1..m {
                if numerics::dot_unchecked(&modes[i], &modes[j]) > spec.max_mode_cosine {
                    continue 'retry;
                }
            }
        }
        let mut mean = vec![0.0; spec.dim];
        for mu in &modes {
            numerics::axpy(1.0 / m as f64, mu, &mut mean);
        }
        if numerics::norm(&mean) < MIN_CLASS_MEAN_NORM {
            continue;
        }
        return Some(modes);
    }
    None
}

/// Gram-Schmidt on the columns of an `n × d` Gaussian matrix.
fn orthonormal_columns(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v = gaussian_vec(rng, n);
        for c in &cols {
            let p = numerics::dot_unchecked(&v, c);
            numerics::axpy(-p, c, &mut v);
        }
        if numerics::norm(&v) > 1e-8 {
            cols.push(numerics::normalize(&v).expect("nonzero"));
        }
    }
    let mut m = Matrix::zeros(n, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    m
}

pub fn make_world(spec: &WorldSpec, seed: u64) -> Result<SyntheticWorld> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(spec.num_classes());
    for (c, &m) in spec.modes.iter().enumerate() {
        let modes = draw_class_modes(&mut rng, spec, m).ok_or_else(|| {
            Error::Config(format!(
                "could not place {m} modes for class {c} in d={} with within-class cosine <= {} after {} retries",
                spec.dim, spec.max_mode_cosine, spec.max_retries
            ))
        })?;
        centroids.push(modes);
    }
    let input_map = orthonormal_columns(&mut rng, spec.input_dim, spec.dim);
    let class_names = (0..spec.num_classes()).map(|c| format!("class{c}")).collect();
    Ok(SyntheticWorld {
        spec: spec.clone(),
        seed,
        centroids,
        input_map,
        class_names,
    })
}

/// Samples a balanced dataset: exactly `n` points per `(class, mode)`, in
/// class-major, mode-minor order.
pub fn sample_dataset(world: &SyntheticWorld, split: Split, seed: u64) -> Vec<Sample> {
    let (n, salt) = match split {
        Split::Train => (world.spec.train_per_mode, 0x7472_6169_6e00_0000u64),
        Split::Test => (world.spec.test_per_mode, 0x7465_7374_0000_0000u64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let spec = &world.spec;
    let mut out = Vec::new();
    for (c, modes) in world.centroids.iter().enumerate() {
        for (k, mu) in modes.iter().enumerate() {
            for _ in 0..n {
                let mut h = mu.clone();
                numerics::axpy(spec.latent_noise, &gaussian_vec(&mut rng, spec.dim), &mut h);
                let mut x = world.input_map.matvec(&h).expect("input map dims");
                numerics::axpy(spec.input_noise, &gaussian_vec(&mut rng, spec.input_dim), &mut x);
                out.push(Sample {
                    x: Vector::new(x).expect("finite sample"),
                    label: c,
                    mode_id: Some(k),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub dim: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl FeatureDataset {
    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .map(|s| s.label + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Loads precomputed features (embedding-file format, `class_id` column as
/// label) and assigns splits from `<row-key>\t<train|test>` lines. Rows not
/// named in the split file are left out.
pub fn load_feature_dataset(
    features: &Path,
    split: &Path,
    expected_dim: Option<usize>,
) -> Result<FeatureDataset> {
    let table = load_embedding_file(features)?;
    if let Some(d) = expected_dim {
        if d != table.dim {
            return Err(Error::Config(format!(
                "feature file {} has dim {}, config expects {d}",
                features.display(),
                table.dim
            )));
        }
    }
    let index: HashMap<&str, usize> = table
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.key.as_str(), i))
        .collect();
    let origin = split.display().to_string();
    let text = fs::read_to_string(split).map_err(|e| Error::io(split, e))?;
    let mut assigned = vec![false; table.len()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let (key, which) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, lineno, "expected <row-key>\\t<train|test>"))?;
        let &row = index
            .get(key)
            .ok_or_else(|| Error::parse(&origin, lineno, format!("unknown row {key:?}")))?;
        if std::mem::replace(&mut assigned[row], true) {
            return Err(Error::parse(&origin, lineno, format!("row {key:?} assigned twice")));
        }
        let rec = &table.records[row];
        let sample = Sample {
            x: Vector::new(rec.vector.clone())?,
            label: rec.class_id,
            mode_id: None,
        };
        match which.trim() {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => {
                return Err(Error::parse(
                    &origin,
                    lineno,
                    format!("split must be train or test, got {other:?}"),
                ))
            }
        }
    }
    Ok(FeatureDataset {
        dim: table.dim,
        train,
        test,
    })
}
