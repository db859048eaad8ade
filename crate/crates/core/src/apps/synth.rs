//! Seeded synthetic instances with planted low-rank structure.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mcp::McpInstance;
use super::nmf::{default_sparsity, SparseNmfInstance};
use crate::block::{BlockVector, Entry, ObservationMask};
use crate::error::{Error, Result};
use crate::io::split_train_test;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmfSynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Nonzeros per column of the planted `U*` (default `⌈0.25 r⌉`).
    #[serde(default)]
    pub sparsity: Option<usize>,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McpSynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    #[serde(default)]
    pub noise: f64,
    /// Fraction of entries observed.
    pub density: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.7
}

/// `M = [U* V* + noise]_+` with `s`-sparse nonnegative `U*` and nonnegative
/// `V*` (uniform on `[0, 1)`). Returns the instance and `(U*, V*)`.
pub fn synthesize_nmf<T: Real>(spec: &NmfSynthSpec, seed: u64) -> Result<(SparseNmfInstance<T>, BlockVector<T>)> {
    if spec.rows == 0 || spec.cols == 0 || spec.rank == 0 {
        return Err(Error::Config("dimensions and rank must be positive".into()));
    }
    let s = spec.sparsity.unwrap_or_else(|| default_sparsity(spec.rank));
    if s == 0 || s > spec.rows {
        return Err(Error::Config(format!("sparsity {s} outside 1..={}", spec.rows)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = Array2::<f64>::zeros((spec.rows, spec.rank));
    for mut col in u.axis_iter_mut(Axis(1)) {
        for row in sample(&mut rng, spec.rows, s) {
            col[row] = rng.random::<f64>();
        }
    }
    let v = Array2::from_shape_simple_fn((spec.rank, spec.cols), || rng.random::<f64>());
    let mut m = u.dot(&v);
    if spec.noise > 0.0 {
        m.mapv_inplace(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (x + spec.noise * z).max(0.0)
        });
    }
    let inst = SparseNmfInstance::new(m.mapv(T::lit), spec.rank)?.with_sparsity(s)?;
    let planted = BlockVector::new(vec![u.mapv(T::lit), v.mapv(T::lit)])?;
    Ok((inst, planted))
}

/// Observes `round(density · m n)` entries of `A = U* V*/√r + noise` (standard
/// normal factors) and splits them into train and test sets.
pub fn synthesize_mcp<T: Real>(spec: &McpSynthSpec, seed: u64) -> Result<McpInstance<T>> {
    if spec.rows == 0 || spec.cols == 0 || spec.rank == 0 {
        return Err(Error::Config("dimensions and rank must be positive".into()));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::Config(format!("density must lie in (0, 1], got {}", spec.density)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let u = Array2::from_shape_simple_fn((spec.rows, spec.rank), &mut normal);
    let v = Array2::from_shape_simple_fn((spec.rank, spec.cols), &mut normal);
    let scale = 1.0 / (spec.rank as f64).sqrt();
    let total = spec.rows * spec.cols;
    let count = ((spec.density * total as f64 + 0.5).floor() as usize).clamp(1, total);
    let mut picked = sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    let entries = picked
        .into_iter()
        .map(|k| {
            let (i, j) = (k / spec.cols, k % spec.cols);
            let clean = u.row(i).dot(&v.column(j)) * scale;
            let z: f64 = StandardNormal.sample(&mut rng);
            Entry {
                row: i,
                col: j,
                value: T::lit(clean + spec.noise * z),
            }
        })
        .collect();
    let full = ObservationMask::new(spec.rows, spec.cols, entries)?;
    let (train, test) = split_train_test(&full, spec.train_fraction, seed ^ 0x9E37_79B9_7F4A_7C15)?;
    McpInstance::new(train, test, spec.rank)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Nmf,
    Mcp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instance<T> {
    Nmf(SparseNmfInstance<T>),
    Mcp(McpInstance<T>),
}

/// Uniform entry point over both generators; `density` is ignored for NMF.
pub fn synthesize_instances<T: Real>(
    kind: SynthKind,
    dims: (usize, usize),
    rank: usize,
    noise: f64,
    density: f64,
    seed: u64,
) -> Result<Instance<T>> {
    match kind {
        SynthKind::Nmf => {
            let spec = NmfSynthSpec {
                rows: dims.0,
                cols: dims.1,
                rank,
                sparsity: None,
                noise,
            };
            Ok(Instance::Nmf(synthesize_nmf(&spec, seed)?.0))
        }
        SynthKind::Mcp => {
            let spec = McpSynthSpec {
                rows: dims.0,
                cols: dims.1,
                rank,
                noise,
                density,
                train_fraction: default_train_fraction(),
            };
            Ok(Instance::Mcp(synthesize_mcp(&spec, seed)?))
        }
    }
}
