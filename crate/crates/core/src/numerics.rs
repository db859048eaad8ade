//! Shared numerical kernels: Gram spectral norms by power iteration,
//! thresholding operators, the scalar exponential-penalty prox, finite
//! difference gradient checks, and small dense symmetric factorizations.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIterOptions {
    /// Relative eigen-residual `‖Gv − λv‖/λ` that stops the iteration.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
            seed: 0x5EED,
        }
    }
}

/// Which Gram product of `B` to take the norm of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramSide {
    /// `‖B Bᵀ‖`
    Left,
    /// `‖Bᵀ B‖`
    Right,
}

pub const DENSE_GRAM_LIMIT: usize = 64;

/// Spectral norm of `B Bᵀ` (or `Bᵀ B`), i.e. `σ_max(B)²`.
///
/// Both sides share the same nonzero spectrum, so the work is done on the
/// smaller of the two Gram matrices: a dense Jacobi eigen-decomposition up to
/// order [`DENSE_GRAM_LIMIT`], power iteration beyond. An all-zero `B` returns
/// the modulus floor instead of zero.
pub fn spectral_norm_gram<T: Real>(b: ArrayView2<T>, _side: GramSide, opts: &PowerIterOptions) -> Result<T> {
    if b.is_empty() {
        return Err(Error::InvalidArgument("spectral norm of an empty matrix".into()));
    }
    let gram = if b.nrows() <= b.ncols() {
        b.dot(&b.t())
    } else {
        b.t().dot(&b)
    };
    Ok(largest_eigenvalue(gram.view(), opts)?.max(T::modulus_floor()))
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix: dense
/// Jacobi up to order [`DENSE_GRAM_LIMIT`], power iteration beyond.
pub fn largest_eigenvalue<T: Real>(g: ArrayView2<T>, opts: &PowerIterOptions) -> Result<T> {
    if g.nrows() <= DENSE_GRAM_LIMIT {
        Ok(symmetric_eigen(g)?.0[0])
    } else {
        Ok(power_iteration(g, opts))
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn power_iteration<T: Real>(g: ArrayView2<T>, opts: &PowerIterOptions) -> T {
    let n = g.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Array1<T> = (0..n).map(|_| T::lit(rng.random::<f64>() + 0.5)).collect();
    let norm = v.dot(&v).sqrt();
    if norm == T::zero() {
        return T::zero();
    }
    v /= norm;
    let tol = T::lit(opts.tol);
    let mut lambda = T::zero();
    for _ in 0..opts.max_iters.max(1) {
        let w = g.dot(&v);
        lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == T::zero() {
            return T::zero();
        }
        let residual = (&w - &v.mapv(|x| x * lambda)).mapv(|x| x * x).sum().sqrt();
        v = w / wn;
        if residual <= tol * lambda.abs() {
            break;
        }
    }
    lambda
}

/// Keeps the `s` largest-magnitude entries of every column and zeroes the rest.
///
/// Ties keep the entry with the smaller row index.
pub fn hard_threshold_columns<T: Real>(x: ArrayView2<T>, s: usize) -> Result<Array2<T>> {
    if s == 0 || s > x.nrows() {
        return Err(Error::InvalidArgument(format!(
            "sparsity {s} outside 1..={}",
            x.nrows()
        )));
    }
    let mut out = x.to_owned();
    if s == x.nrows() {
        return Ok(out);
    }
    let mut order: Vec<usize> = Vec::with_capacity(x.nrows());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        order.clear();
        order.extend(0..x.nrows());
        order.sort_by(|&a, &b| {
            col[b]
                .abs()
                .partial_cmp(&col[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &row in &order[s..] {
            out[[row, j]] = T::zero();
        }
    }
    Ok(out)
}

/// `S_τ(P, W)_{ij} = [|p_ij| − τ w_ij]_+ · sign(p_ij)`.
pub fn soft_threshold_weighted<T: Real>(p: ArrayView2<T>, w: ArrayView2<T>, tau: T) -> Result<Array2<T>> {
    crate::block::check_shape("soft_threshold_weighted", p.dim(), w.dim())?;
    if w.iter().any(|&v| v < T::zero()) {
        return Err(Error::InvalidArgument("soft-threshold weights must be nonnegative".into()));
    }
    Ok(Zip::from(p).and(w).map_collect(|&pv, &wv| soft_threshold(pv, tau * wv)))
}

#[inline]
pub fn soft_threshold<T: Real>(p: T, t: T) -> T {
    let mag = p.abs() - t;
    if mag > T::zero() {
        mag * p.signum()
    } else {
        T::zero()
    }
}

/// Objective of the scalar exponential prox: `½(x − v)² + γ(1 − e^{−θ|x|})`.
#[inline]
pub fn prox_exponential_objective<T: Real>(x: T, v: T, gamma: T, theta: T) -> T {
    let d = x - v;
    T::lit(0.5) * d * d + gamma * (T::one() - (-theta * x.abs()).exp())
}

/// Global minimizer of `½(x − v)² + γ(1 − e^{−θ|x|})`.
///
/// On the half-line of `sign(v)` the stationarity residual
/// `h(t) = t − |v| + γθe^{−θt}` is convex, so the only interior local minimizer
/// is its largest root; it is compared against `x = 0` and ties go to zero.
pub fn prox_exponential<T: Real>(v: T, gamma: T, theta: T) -> T {
    let a = v.abs();
    if a == T::zero() {
        return T::zero();
    }
    let gt = gamma * theta;
    let h = |t: T| t - a + gt * (-theta * t).exp();
    let dh = |t: T| T::one() - gt * theta * (-theta * t).exp();

    // h is decreasing up to its minimizer t_m and increasing afterwards.
    let t_min = if gt * theta > T::one() {
        (gt * theta).ln() / theta
    } else {
        T::zero()
    };
    let mut lo = t_min.min(a);
    let mut hi = a;
    let candidate = if h(lo) >= T::zero() {
        None
    } else {
        // h(lo) < 0 < h(hi) and h is convex increasing on [lo, hi]: Newton
        // from the right is monotone, bisection guards the bracket.
        let mut t = hi;
        for _ in 0..200 {
            let ht = h(t);
            if ht == T::zero() {
                break;
            }
            if ht > T::zero() {
                hi = t;
            } else {
                lo = t;
            }
            let d = dh(t);
            let mut next = if d > T::zero() { t - ht / d } else { hi };
            if !(next > lo && next < hi) {
                next = T::lit(0.5) * (lo + hi);
            }
            if (next - t).abs() <= T::epsilon() * (T::one() + t.abs()) {
                t = next;
                break;
            }
            t = next;
        }
        Some(t)
    };
    let best = match candidate {
        Some(t) => {
            let q0 = prox_exponential_objective(T::zero(), a, gamma, theta);
            let qt = prox_exponential_objective(t, a, gamma, theta);
            if qt < q0 {
                t
            } else {
                T::zero()
            }
        }
        None => T::zero(),
    };
    best * v.signum()
}

/// Default finite-difference step `1e−6·(1 + ‖x‖_∞)`.
pub fn default_fd_step<T: Real>(x: ArrayView2<T>) -> T {
    let inf = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    T::lit(1e-6) * (T::one() + inf)
}

/// Maximum relative entry error between `grad` and a central-difference
/// gradient of `eval` at `x`.
///
/// Entries are compared relative to `max(1, ‖grad‖_∞)`.
pub fn grad_check<T: Real>(
    eval: impl Fn(ArrayView2<T>) -> T,
    grad: ArrayView2<T>,
    x: ArrayView2<T>,
    h: T,
) -> Result<T> {
    crate::block::check_shape("grad_check", x.dim(), grad.dim())?;
    if h <= T::zero() {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let scale = grad.iter().fold(T::one(), |m, &v| m.max(v.abs()));
    let mut probe = x.to_owned();
    let mut worst = T::zero();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let fp = eval(probe.view());
        probe[[r, c]] = orig - h;
        let fm = eval(probe.view());
        probe[[r, c]] = orig;
        let fd = (fp - fm) / (h + h);
        let err = (fd - grad[[r, c]]).abs() / scale;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument("eigen-decomposition needs a square matrix".into()));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let tiny = T::epsilon() * T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum();
        let total: T = m.iter().map(|&x| x * x).sum();
        if off <= tiny * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| m[[y, y]].partial_cmp(&m[[x, x]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = idx.iter().map(|&k| m[[k, k]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in idx.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((values, vectors))
}

/// Solves `A x = b` for symmetric positive definite `A` (Cholesky).
pub fn solve_spd<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::InvalidArgument("solve_spd: incompatible shapes".into()));
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= T::zero() {
            return Err(Error::Numerical("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Orthonormal basis of the column span of `y` (modified Gram-Schmidt, run twice).
///
/// Columns that become numerically dependent are returned as zero columns.
pub fn orthonormalize<T: Real>(y: ArrayView2<T>) -> Array2<T> {
    let mut q = y.to_owned();
    let k = q.ncols();
    for j in 0..k {
        let original = q.column(j).dot(&q.column(j)).sqrt();
        for _ in 0..2 {
            for p in 0..j {
                let proj = q.column(p).dot(&q.column(j));
                let qp = q.column(p).to_owned();
                q.column_mut(j).scaled_add(-proj, &qp);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm <= T::lit(1e-12) * original.max(T::min_positive_value()) || norm == T::zero() {
            q.column_mut(j).fill(T::zero());
        } else {
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spectral_norm_trivial() {
        let opts = PowerIterOptions::default();
        let i5 = Array2::<f64>::eye(5);
        assert!((spectral_norm_gram(i5.view(), GramSide::Left, &opts).unwrap() - 1.0).abs() < 1e-12);
        let d = array![[3.0f64, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!((spectral_norm_gram(d.view(), GramSide::Right, &opts).unwrap() - 9.0).abs() < 1e-6);
        let z = Array2::<f64>::zeros((3, 4));
        assert_eq!(spectral_norm_gram(z.view(), GramSide::Left, &opts).unwrap(), 1e-12);
    }

    #[test]
    fn hard_threshold_examples() {
        let x = array![[3.0f64], [1.0], [2.0]];
        assert_eq!(hard_threshold_columns(x.view(), 2).unwrap(), array![[3.0], [0.0], [2.0]]);
        assert_eq!(hard_threshold_columns(x.view(), 3).unwrap(), x);
        let tie = array![[2.0f64], [2.0], [1.0]];
        assert_eq!(hard_threshold_columns(tie.view(), 1).unwrap(), array![[2.0], [0.0], [0.0]]);
        assert!(hard_threshold_columns(x.view(), 0).is_err());
        assert!(hard_threshold_columns(x.view(), 4).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        let p = array![[1.2f64, -0.3]];
        let w = array![[1.0, 1.0]];
        let out = soft_threshold_weighted(p.view(), w.view(), 0.5).unwrap();
        assert!((out[[0, 0]] - 0.7).abs() < 1e-15);
        assert_eq!(out[[0, 1]], 0.0);
        let z = Array2::zeros((1, 2));
        assert_eq!(soft_threshold_weighted(p.view(), z.view(), 0.5).unwrap(), p);
        let neg = array![[1.0, -1.0]];
        assert!(soft_threshold_weighted(p.view(), neg.view(), 0.5).is_err());
    }

    #[test]
    fn prox_exponential_examples() {
        assert_eq!(prox_exponential(0.0f64, 0.1, 5.0), 0.0);
        let x: f64 = prox_exponential(10.0, 0.1, 5.0);
        assert!((x - 10.0).abs() < 1e-8);
        let neg: f64 = prox_exponential(-10.0, 0.1, 5.0);
        assert!((neg + x).abs() < 1e-15);
    }

    #[test]
    fn prox_exponential_stationarity() {
        for &(v, g, t) in &[(0.7, 0.3, 4.0), (2.0, 1.5, 2.0), (-1.3, 0.2, 9.0), (0.05, 2.0, 0.3)] {
            let x: f64 = prox_exponential(v, g, t);
            if x != 0.0 {
                let r = x - v + x.signum() * g * t * (-t * x.abs()).exp();
                assert!(r.abs() < 1e-10, "residual {r} at v={v}");
            }
        }
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let c = array![[1.0f64, -2.0], [0.5, 3.0]];
        let x = array![[0.3, 0.1], [-0.2, 0.9]];
        let err = grad_check(|z| (&z * &c).sum(), c.view(), x.view(), 1e-3).unwrap();
        assert!(err <= 1e-10);
    }

    #[test]
    fn jacobi_eigen_diagonalizes() {
        let a = array![[4.0f64, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
        let (vals, vecs) = symmetric_eigen(a.view()).unwrap();
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (x, y) in recon.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }

    #[test]
    fn cholesky_solve() {
        let a = array![[4.0f64, 1.0], [1.0, 3.0]];
        let b = array![[1.0], [2.0]];
        let x = solve_spd(a.view(), b.view()).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v: &f64| v.abs() < 1e-14));
        assert!(solve_spd(array![[1.0, 2.0], [2.0, 1.0]].view(), b.view()).is_err());
    }

    #[test]
    fn orthonormalize_gives_orthonormal_columns() {
        let y = array![[1.0f64, 2.0], [0.0, 1.0], [1.0, 0.0]];
        let q = orthonormalize(y.view());
        let g = q.t().dot(&q);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-14);
            }
        }
    }
}
