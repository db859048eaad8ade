//! Block surrogate functions `u_i(x_i, y)` of the smooth part `f`.
//!
//! Five families are supported: proximal, Lipschitz gradient, Bregman,
//! quadratic and composite. Every family is anchored (`u_i(y_i, y) = f(y)`)
//! and majorizes the block function `x_i ↦ f(x_i, y_{≠i})`. The strong
//! convexity modulus `ρ_i(y)` that drives the step constants is exposed by
//! [`surrogate_modulus`].

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{check_shape, dist_sq, frob_dot, BlockVector, CompositeStructure, Problem};
use crate::error::{Error, Result};
use crate::numerics::{solve_spd, symmetric_eigen};
use crate::scalar::Real;

/// `(i, y) ↦ value`, e.g. a block Lipschitz constant `L_i(y)`.
pub type BlockScalarFn<T> = Arc<dyn Fn(usize, &BlockVector<T>) -> Result<T> + Send + Sync>;

/// `(i, y) ↦ H_i(y)`.
pub type QuadraticFormFn<T> =
    Arc<dyn Fn(usize, &BlockVector<T>) -> Result<QuadraticForm<T>> + Send + Sync>;

/// A positive constant, or a callback evaluated at the anchor `y`.
///
/// Callback results are floored at `1e−12`.
#[derive(Clone)]
pub enum Modulus<T> {
    Fixed(T),
    Callback(BlockScalarFn<T>),
}

impl<T: Real> Modulus<T> {
    pub fn callback(f: impl Fn(usize, &BlockVector<T>) -> Result<T> + Send + Sync + 'static) -> Self {
        Modulus::Callback(Arc::new(f))
    }

    pub fn eval(&self, i: usize, y: &BlockVector<T>) -> Result<T> {
        let v = match self {
            Modulus::Fixed(v) => *v,
            Modulus::Callback(f) => f(i, y)?,
        };
        if v.is_nan() {
            return Err(Error::Numerical(format!("modulus callback for block {i} returned NaN")));
        }
        Ok(v.max(T::modulus_floor()))
    }
}

impl<T: fmt::Debug> fmt::Debug for Modulus<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modulus::Fixed(v) => f.debug_tuple("Fixed").field(v).finish(),
            Modulus::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

/// Symmetric positive definite operator acting on one matrix block.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadraticForm<T> {
    /// `X ↦ h X`
    Scalar(T),
    /// `X ↦ D ∘ X` (entry-wise weights of the block's shape)
    Diagonal(Array2<T>),
    /// `X ↦ S X`
    Left(Array2<T>),
    /// `X ↦ X S`
    Right(Array2<T>),
    /// `vec(X) ↦ S vec(X)` with row-major `vec`
    Dense(Array2<T>),
}

impl<T: Real> QuadraticForm<T> {
    pub fn apply(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        match self {
            QuadraticForm::Scalar(h) => Ok(x.mapv(|v| v * *h)),
            QuadraticForm::Diagonal(d) => {
                check_shape("QuadraticForm::apply", d.dim(), x.dim())?;
                Ok(&x * d)
            }
            QuadraticForm::Left(s) => {
                check_shape("QuadraticForm::apply", (s.ncols(), x.ncols()), x.dim())?;
                Ok(s.dot(&x))
            }
            QuadraticForm::Right(s) => {
                check_shape("QuadraticForm::apply", (x.nrows(), s.nrows()), x.dim())?;
                Ok(x.dot(s))
            }
            QuadraticForm::Dense(s) => {
                if s.nrows() != x.len() {
                    return Err(Error::ShapeMismatch {
                        context: "QuadraticForm::apply",
                        expected: (s.nrows(), 1),
                        found: (x.len(), 1),
                    });
                }
                let flat: ndarray::Array1<T> = x.iter().copied().collect();
                let out = s.dot(&flat);
                Ok(Array2::from_shape_vec(x.dim(), out.to_vec()).expect("shape preserved"))
            }
        }
    }

    /// `⟨x, H x⟩`.
    pub fn quadratic(&self, x: ArrayView2<T>) -> Result<T> {
        Ok(frob_dot(x, self.apply(x)?.view()))
    }

    /// `H⁻¹ b`.
    pub fn solve(&self, b: ArrayView2<T>) -> Result<Array2<T>> {
        match self {
            QuadraticForm::Scalar(h) => Ok(b.mapv(|v| v / *h)),
            QuadraticForm::Diagonal(d) => {
                check_shape("QuadraticForm::solve", d.dim(), b.dim())?;
                Ok(&b / d)
            }
            QuadraticForm::Left(s) => solve_spd(s.view(), b),
            QuadraticForm::Right(s) => Ok(solve_spd(s.view(), b.t())?.reversed_axes()),
            QuadraticForm::Dense(s) => {
                let flat = Array2::from_shape_vec((b.len(), 1), b.iter().copied().collect())
                    .expect("column vector");
                let x = solve_spd(s.view(), flat.view())?;
                Ok(Array2::from_shape_vec(b.dim(), x.into_raw_vec_and_offset().0).expect("shape preserved"))
            }
        }
    }

    /// `(λ_min, λ_max)`.
    pub fn eigen_bounds(&self) -> Result<(T, T)> {
        let fold = |d: &Array2<T>| {
            d.iter()
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        };
        match self {
            QuadraticForm::Scalar(h) => Ok((*h, *h)),
            QuadraticForm::Diagonal(d) => Ok(fold(d)),
            QuadraticForm::Left(s) | QuadraticForm::Right(s) | QuadraticForm::Dense(s) => {
                let (vals, _) = symmetric_eigen(s.view())?;
                Ok((vals[vals.len() - 1], vals[0]))
            }
        }
    }

    pub fn lambda_min(&self) -> Result<T> {
        Ok(self.eigen_bounds()?.0)
    }

    /// Operator norm `‖H‖`.
    pub fn norm(&self) -> Result<T> {
        Ok(self.eigen_bounds()?.1)
    }

    pub fn as_scalar(&self) -> Option<T> {
        match self {
            QuadraticForm::Scalar(h) => Some(*h),
            _ => None,
        }
    }
}

/// Convex kernel `φ` of a Bregman divergence `D_φ(x, z) = φ(x) − φ(z) − ⟨∇φ(z), x − z⟩`.
pub trait Kernel<T: Real>: Send + Sync {
    fn value(&self, x: ArrayView2<T>) -> T;

    fn gradient(&self, x: ArrayView2<T>) -> Array2<T>;

    /// Strong convexity modulus `ρ_φ`.
    fn modulus(&self) -> T;

    /// `(∇φ)⁻¹`, when it has a closed form.
    fn gradient_inverse(&self, _g: ArrayView2<T>) -> Option<Array2<T>> {
        None
    }

    /// `Some(s)` when `φ(x) = (s/2)‖x‖²`.
    fn euclidean_scale(&self) -> Option<T> {
        None
    }

    fn divergence(&self, x: ArrayView2<T>, z: ArrayView2<T>) -> T {
        let d = &x - &z;
        self.value(x) - self.value(z) - frob_dot(self.gradient(z).view(), d.view())
    }
}

/// `φ(x) = (s/2)‖x‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquaredNorm<T> {
    pub scale: T,
}

impl<T: Real> Kernel<T> for SquaredNorm<T> {
    fn value(&self, x: ArrayView2<T>) -> T {
        T::lit(0.5) * self.scale * x.iter().map(|&v| v * v).sum::<T>()
    }

    fn gradient(&self, x: ArrayView2<T>) -> Array2<T> {
        x.mapv(|v| v * self.scale)
    }

    fn modulus(&self) -> T {
        self.scale
    }

    fn gradient_inverse(&self, g: ArrayView2<T>) -> Option<Array2<T>> {
        Some(g.mapv(|v| v / self.scale))
    }

    fn euclidean_scale(&self) -> Option<T> {
        Some(self.scale)
    }
}

/// `φ(x) = ½⟨x, H x⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticKernel<T> {
    form: QuadraticForm<T>,
    lambda_min: T,
}

impl<T: Real> QuadraticKernel<T> {
    pub fn new(form: QuadraticForm<T>) -> Result<Self> {
        let lambda_min = form.lambda_min()?;
        if lambda_min <= T::zero() {
            return Err(Error::Config("quadratic kernel needs a positive definite form".into()));
        }
        Ok(Self { form, lambda_min })
    }

    pub fn form(&self) -> &QuadraticForm<T> {
        &self.form
    }
}

impl<T: Real> Kernel<T> for QuadraticKernel<T> {
    fn value(&self, x: ArrayView2<T>) -> T {
        T::lit(0.5) * self.form.quadratic(x).expect("kernel shape")
    }

    fn gradient(&self, x: ArrayView2<T>) -> Array2<T> {
        self.form.apply(x).expect("kernel shape")
    }

    fn modulus(&self) -> T {
        self.lambda_min
    }

    fn gradient_inverse(&self, g: ArrayView2<T>) -> Option<Array2<T>> {
        self.form.solve(g).ok()
    }

    fn euclidean_scale(&self) -> Option<T> {
        self.form.as_scalar()
    }
}

/// Which formulas turn `(A, ρ)` into the step constants `(γ, η)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityMode {
    /// No convexity assumed: loose inertia bounds.
    #[default]
    General,
    /// `x_i ↦ f(x_i, y_{≠i})` is convex: tight inertia bounds.
    BlockFConvex,
    /// Block functions of `f` and `g_i` are all convex.
    FullyConvex,
}

#[derive(Clone)]
pub enum SurrogateKind<T> {
    /// `f(x_i, y_{≠i}) + (ρ/2)‖x_i − y_i‖²`
    Proximal { rho: Modulus<T> },
    /// `f(y) + ⟨∇_i f(y), x_i − y_i⟩ + (κL/2)‖x_i − y_i‖²`
    Lipschitz { kappa: T, lipschitz: Modulus<T> },
    /// `f(y) + ⟨∇_i f(y), x_i − y_i⟩ + κL·D_φ(x_i, y_i)`
    Bregman {
        kappa: T,
        kernel: Arc<dyn Kernel<T>>,
        relative_l: Modulus<T>,
    },
    /// `f(y) + ⟨∇_i f(y), x_i − y_i⟩ + (κ/2)⟨x_i − y_i, H(x_i − y_i)⟩`
    Quadratic { kappa: T, hessian: QuadraticFormFn<T> },
    /// `u^ψ(x_i, y) + φ(r(y)) + ⟨∇_i φ(r(y)), r_i(x_i) − r_i(y_i)⟩` for `f = ψ + φ∘r`.
    Composite { inner: Box<SurrogateKind<T>> },
}

impl<T: fmt::Debug> fmt::Debug for SurrogateKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurrogateKind::Proximal { rho } => f.debug_struct("Proximal").field("rho", rho).finish(),
            SurrogateKind::Lipschitz { kappa, lipschitz } => f
                .debug_struct("Lipschitz")
                .field("kappa", kappa)
                .field("lipschitz", lipschitz)
                .finish(),
            SurrogateKind::Bregman { kappa, relative_l, .. } => f
                .debug_struct("Bregman")
                .field("kappa", kappa)
                .field("relative_l", relative_l)
                .finish_non_exhaustive(),
            SurrogateKind::Quadratic { kappa, .. } => {
                f.debug_struct("Quadratic").field("kappa", kappa).finish_non_exhaustive()
            }
            SurrogateKind::Composite { inner } => f.debug_struct("Composite").field("inner", inner).finish(),
        }
    }
}

impl<T: Real> SurrogateKind<T> {
    pub fn lipschitz(kappa: T, l: impl Fn(usize, &BlockVector<T>) -> Result<T> + Send + Sync + 'static) -> Self {
        SurrogateKind::Lipschitz {
            kappa,
            lipschitz: Modulus::callback(l),
        }
    }

    pub fn kappa(&self) -> T {
        match self {
            SurrogateKind::Proximal { .. } => T::one(),
            SurrogateKind::Lipschitz { kappa, .. }
            | SurrogateKind::Bregman { kappa, .. }
            | SurrogateKind::Quadratic { kappa, .. } => *kappa,
            SurrogateKind::Composite { inner } => inner.kappa(),
        }
    }

    /// The non-composite family that carries the step (the inner one for composites).
    pub fn base(&self) -> &SurrogateKind<T> {
        match self {
            SurrogateKind::Composite { inner } => inner.base(),
            other => other,
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, SurrogateKind::Composite { .. })
    }
}

/// Per-block surrogate choice together with the caller-declared convexity mode.
#[derive(Clone, Debug)]
pub struct SurrogateConfig<T> {
    pub kind: SurrogateKind<T>,
    pub mode: ConvexityMode,
}

impl<T: Real> SurrogateConfig<T> {
    pub fn new(kind: SurrogateKind<T>, mode: ConvexityMode) -> Result<Self> {
        validate_kind(&kind)?;
        Ok(Self { kind, mode })
    }
}

fn validate_kind<T: Real>(kind: &SurrogateKind<T>) -> Result<()> {
    match kind {
        SurrogateKind::Proximal { rho: Modulus::Fixed(r) } if *r <= T::zero() => {
            Err(Error::Config("proximal modulus must be positive".into()))
        }
        SurrogateKind::Lipschitz { kappa, .. }
        | SurrogateKind::Bregman { kappa, .. }
        | SurrogateKind::Quadratic { kappa, .. }
            if !(*kappa >= T::one()) =>
        {
            Err(Error::Config(format!("κ must be at least 1, got {kappa}")))
        }
        SurrogateKind::Composite { inner } => match inner.as_ref() {
            SurrogateKind::Composite { .. } => Err(Error::Config("nested composite surrogates".into())),
            other => validate_kind(other),
        },
        _ => Ok(()),
    }
}

/// Source of `f`-values and block gradients for a surrogate: the full smooth
/// part, or the inner part `ψ` of a composite decomposition.
#[derive(Clone, Copy)]
pub(crate) enum SmoothPart<'a, T: Real> {
    Full(&'a dyn Problem<T>),
    Inner(&'a dyn CompositeStructure<T>),
}

impl<'a, T: Real> SmoothPart<'a, T> {
    pub(crate) fn for_kind(kind: &SurrogateKind<T>, p: &'a dyn Problem<T>) -> Result<Self> {
        if kind.is_composite() {
            p.composite().map(SmoothPart::Inner).ok_or_else(|| {
                Error::Config("composite surrogate on a problem without composite structure".into())
            })
        } else {
            Ok(SmoothPart::Full(p))
        }
    }

    pub(crate) fn value(&self, x: &BlockVector<T>) -> Result<T> {
        match self {
            SmoothPart::Full(p) => p.smooth_value(x),
            SmoothPart::Inner(c) => c.inner_value(x),
        }
    }

    pub(crate) fn gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>> {
        match self {
            SmoothPart::Full(p) => p.block_gradient(i, x),
            SmoothPart::Inner(c) => c.inner_block_gradient(i, x),
        }
    }
}

/// Constants of one surrogate at an anchor `y`.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub kappa: T,
    /// `L_i(y)` for Lipschitz/Bregman, `ρ` for proximal, `‖H‖` for quadratic.
    pub lipschitz: T,
    /// Weight of the proximity term: `κL`, `ρ`, or `κ` (quadratic, applied through `H`).
    pub curvature: T,
    /// `ρ_i(y)`; zero signals `κ = 1` with a nonconvex `g_i`.
    pub modulus: T,
    pub form: Option<QuadraticForm<T>>,
}

pub(crate) fn prepare<T: Real>(kind: &SurrogateKind<T>, i: usize, y: &BlockVector<T>, g_convex: bool) -> Result<Prepared<T>> {
    let excess = |kappa: T| if g_convex { kappa } else { kappa - T::one() };
    Ok(match kind {
        SurrogateKind::Proximal { rho } => {
            let r = rho.eval(i, y)?;
            Prepared {
                kappa: T::one(),
                lipschitz: r,
                curvature: r,
                modulus: r,
                form: None,
            }
        }
        SurrogateKind::Lipschitz { kappa, lipschitz } => {
            let l = lipschitz.eval(i, y)?;
            Prepared {
                kappa: *kappa,
                lipschitz: l,
                curvature: *kappa * l,
                modulus: excess(*kappa) * l,
                form: None,
            }
        }
        SurrogateKind::Bregman {
            kappa,
            kernel,
            relative_l,
        } => {
            let l = relative_l.eval(i, y)?;
            Prepared {
                kappa: *kappa,
                lipschitz: l,
                curvature: *kappa * l,
                modulus: excess(*kappa) * l * kernel.modulus(),
                form: None,
            }
        }
        SurrogateKind::Quadratic { kappa, hessian } => {
            let h = hessian(i, y)?;
            let (lo, hi) = h.eigen_bounds()?;
            if lo <= T::zero() {
                return Err(Error::Config(format!("quadratic surrogate of block {i}: H is not positive definite")));
            }
            Prepared {
                kappa: *kappa,
                lipschitz: hi,
                curvature: *kappa,
                modulus: excess(*kappa) * lo,
                form: Some(h),
            }
        }
        SurrogateKind::Composite { inner } => prepare(inner, i, y, g_convex)?,
    })
}

/// Strong convexity modulus `ρ_i(y)` of the surrogate.
///
/// `g_convex` selects between `(κ−1)L` (nonconvex `g_i`) and `κL` (convex
/// `g_i`, where `κ = 1` is allowed). A modulus that is not positive after
/// flooring is a configuration error.
pub fn surrogate_modulus<T: Real>(cfg: &SurrogateConfig<T>, i: usize, y: &BlockVector<T>, g_convex: bool) -> Result<T> {
    let m = prepare(&cfg.kind, i, y, g_convex)?.modulus;
    if !(m > T::zero()) {
        return Err(Error::Config(format!(
            "surrogate modulus of block {i} is not positive (κ = 1 requires a convex g_i)"
        )));
    }
    Ok(m)
}

/// `u_i(x_i, y)`.
pub fn surrogate_value<T: Real>(
    cfg: &SurrogateConfig<T>,
    i: usize,
    xi: ArrayView2<T>,
    y: &BlockVector<T>,
    p: &dyn Problem<T>,
) -> Result<T> {
    check_shape("surrogate_value", y.block(i).dim(), xi.dim())?;
    let part = SmoothPart::for_kind(&cfg.kind, p)?;
    match &cfg.kind {
        SurrogateKind::Composite { inner } => {
            let c = p.composite().expect("checked by for_kind");
            Ok(base_value(inner, part, i, xi, y)? + composite_linearization(c, y, i, xi)?)
        }
        kind => base_value(kind, part, i, xi, y),
    }
}

fn base_value<T: Real>(
    kind: &SurrogateKind<T>,
    part: SmoothPart<'_, T>,
    i: usize,
    xi: ArrayView2<T>,
    y: &BlockVector<T>,
) -> Result<T> {
    let yi = y.block(i).view();
    let half = T::lit(0.5);
    let linear = |part: SmoothPart<'_, T>| -> Result<(T, Array2<T>, Array2<T>)> {
        let fy = part.value(y)?;
        let g = part.gradient(i, y)?;
        let d = &xi - &yi;
        Ok((fy, g, d))
    };
    match kind {
        SurrogateKind::Proximal { rho } => {
            let r = rho.eval(i, y)?;
            Ok(part.value(&y.with_block(i, xi)?)? + half * r * dist_sq(xi, yi))
        }
        SurrogateKind::Lipschitz { kappa, lipschitz } => {
            let l = lipschitz.eval(i, y)?;
            let (fy, g, d) = linear(part)?;
            Ok(fy + frob_dot(g.view(), d.view()) + half * *kappa * l * frob_dot(d.view(), d.view()))
        }
        SurrogateKind::Bregman {
            kappa,
            kernel,
            relative_l,
        } => {
            let l = relative_l.eval(i, y)?;
            let (fy, g, d) = linear(part)?;
            Ok(fy + frob_dot(g.view(), d.view()) + *kappa * l * kernel.divergence(xi, yi))
        }
        SurrogateKind::Quadratic { kappa, hessian } => {
            let h = hessian(i, y)?;
            let (fy, g, d) = linear(part)?;
            Ok(fy + frob_dot(g.view(), d.view()) + half * *kappa * h.quadratic(d.view())?)
        }
        SurrogateKind::Composite { .. } => Err(Error::Config("nested composite surrogates".into())),
    }
}

/// `φ(r(y)) + ⟨∇_i φ(r(y)), r_i(x_i) − r_i(y_i)⟩`, the concave upper bound of
/// `(φ∘r)(x_i, y_{≠i})`.
pub fn composite_linearization<T: Real>(
    c: &dyn CompositeStructure<T>,
    y: &BlockVector<T>,
    i: usize,
    xi: ArrayView2<T>,
) -> Result<T> {
    check_shape("composite_linearization", y.block(i).dim(), xi.dim())?;
    let mapped = c.map(y)?;
    let w = c.outer_block_gradient(i, &mapped);
    let rx = c.map_block(i, xi);
    let diff = &rx - mapped.block(i);
    Ok(c.outer_value(&mapped) + frob_dot(w.view(), diff.view()))
}

/// Outcome of a sampled majorization test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MajorizationReport {
    pub samples: usize,
    /// Samples with `u_i(x_i, y) − f(x_i, y_{≠i}) < −1e−10`.
    pub violations: usize,
    /// `|u_i(y_i, y) − f(y)|`.
    pub max_gap_at_anchor: f64,
    /// Smallest observed `u_i(x_i, y) − f(x_i, y_{≠i})`.
    pub min_gap: f64,
    pub f_at_anchor: f64,
}

pub const MAJORIZATION_SLACK: f64 = 1e-10;

/// Draws `samples` points with entries uniform in `y_i ± radius` and compares
/// the surrogate against the block function.
pub fn check_majorization<T: Real>(
    cfg: &SurrogateConfig<T>,
    i: usize,
    p: &dyn Problem<T>,
    y: &BlockVector<T>,
    samples: usize,
    radius: T,
    seed: u64,
) -> Result<MajorizationReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("check_majorization needs at least one sample".into()));
    }
    let yi = y.block(i);
    let fy = p.smooth_value(y)?;
    let anchor = surrogate_value(cfg, i, yi.view(), y, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    let r = radius.to_f64_lossy();
    let mut x = yi.clone();
    for _ in 0..samples {
        Zip::from(&mut x)
            .and(yi)
            .for_each(|xv, &yv| *xv = yv + T::lit(rng.random_range(-r..=r)));
        let u = surrogate_value(cfg, i, x.view(), y, p)?;
        let f = p.smooth_value(&y.with_block(i, x.view())?)?;
        let gap = (u - f).to_f64_lossy();
        if gap.is_nan() {
            return Err(Error::Numerical("majorization gap is NaN".into()));
        }
        if gap < -MAJORIZATION_SLACK {
            violations += 1;
        }
        min_gap = min_gap.min(gap);
    }
    Ok(MajorizationReport {
        samples,
        violations,
        max_gap_at_anchor: (anchor - fy).abs().to_f64_lossy(),
        min_gap,
        f_at_anchor: fy.to_f64_lossy(),
    })
}
