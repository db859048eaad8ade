//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use titan_core::ObservationMask;

/// Largest eigenvalue of `BBᵀ` from a dense symmetric eigen-decomposition.
pub fn gram_norm(b: ArrayView2<f64>) -> f64 {
    let m = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]);
    let g = &m * m.transpose();
    g.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn soft(p: f64, t: f64) -> f64 {
    if p > t {
        p - t
    } else if p < -t {
        p + t
    } else {
        0.0
    }
}

/// `½‖P(A − UV)‖²` by direct summation.
pub fn masked_loss(mask: &ObservationMask<f64>, u: ArrayView2<f64>, v: ArrayView2<f64>) -> f64 {
    let mut s = 0.0;
    for e in mask.entries() {
        let mut pred = 0.0;
        for k in 0..u.ncols() {
            pred += u[[e.row, k]] * v[[k, e.col]];
        }
        s += (e.value - pred) * (e.value - pred);
    }
    0.5 * s
}

/// `(∇_U, ∇_V)` of the masked loss from the dense residual `P(UV − A)`.
pub fn masked_gradients(mask: &ObservationMask<f64>, u: ArrayView2<f64>, v: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut r = Array2::<f64>::zeros((u.nrows(), v.ncols()));
    for e in mask.entries() {
        let mut pred = 0.0;
        for k in 0..u.ncols() {
            pred += u[[e.row, k]] * v[[k, e.col]];
        }
        r[[e.row, e.col]] = pred - e.value;
    }
    (r.dot(&v.t()), u.t().dot(&r))
}

/// `∇_U` then `∇_V` of the masked loss, accumulated entry by entry.
pub fn masked_gradient_block(mask: &ObservationMask<f64>, i: usize, u: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let r = u.ncols();
    let mut g = if i == 0 { Array2::zeros(u.dim()) } else { Array2::zeros(v.dim()) };
    for e in mask.entries() {
        let mut pred = 0.0;
        for k in 0..r {
            pred += u[[e.row, k]] * v[[k, e.col]];
        }
        let res = e.value - pred;
        for k in 0..r {
            if i == 0 {
                g[[e.row, k]] -= res * v[[k, e.col]];
            } else {
                g[[k, e.col]] -= res * u[[e.row, k]];
            }
        }
    }
    g
}

/// Golden-section minimizer of a unimodal scalar function on `[lo, hi]`,
/// finished by comparing against the bracket ends and zero.
pub fn golden(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let (a0, b0) = (lo, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..300 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mut best = 0.5 * (lo + hi);
    for c in [a0, b0, 0.0] {
        if (a0..=b0).contains(&c) && f(c) < f(best) {
            best = c;
        }
    }
    best
}

/// Argmin of `f` on an `n`-point uniform grid of `[lo, hi]`.
pub fn grid_argmin(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f(lo));
    for k in 1..n {
        let x = lo + h * k as f64;
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Two-level grid: a coarse pass then a fine pass over the two neighbouring cells.
pub fn refined_grid_argmin(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let (x, _) = grid_argmin(f, lo, hi, n);
    let (x, _) = grid_argmin(f, x - h, x + h, n);
    let h2 = 2.0 * h / (n - 1) as f64;
    grid_argmin(f, x - h2, x + h2, n).0
}

/// Telescoped decrease sums after each of the first `k` iterations:
/// `(F(x^K) + (1−C)Σ(η/2)‖Δ‖², F(x^0) + Σ_i(γ_i/2)‖x_i^0 − x_i^{−1}‖²)`.
pub fn telescoped(log: &titan_core::solver::RunLog, c: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut first_gamma = std::collections::BTreeMap::new();
    for rec in &log.records {
        for u in &rec.updates {
            acc += 0.5 * u.eta * u.step_norm_sq;
            first_gamma.entry(u.block).or_insert(0.5 * u.gamma * u.prev_step_norm_sq);
        }
        let rhs = log.initial_objective + first_gamma.values().sum::<f64>();
        out.push((rec.objective + (1.0 - c) * acc, rhs));
    }
    out
}
