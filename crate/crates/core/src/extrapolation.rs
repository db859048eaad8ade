//! Extrapolation operators `G_i^k`, the Nesterov `μ` schedule, and the
//! `(A, ρ) → (γ, η)` calculus that keeps inertial steps nearly sufficiently
//! decreasing.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::block::frob_sq;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::surrogate::{ConvexityMode, Kernel, QuadraticForm};

/// `μ_k = ½(1 + √(1 + 4μ_{k−1}²))`.
pub fn mu_next<T: Real>(mu_prev: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (T::one() + T::lit(4.0) * mu_prev * mu_prev).sqrt())
}

/// Per-block Nesterov sequence `μ_0 = 1, μ_1, μ_2, …`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuSchedule<T> {
    n: usize,
    mu_prev: T,
    mu: T,
}

impl<T: Real> Default for MuSchedule<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> MuSchedule<T> {
    pub fn new() -> Self {
        Self {
            n: 0,
            mu_prev: T::one(),
            mu: T::one(),
        }
    }

    /// Number of updates seen so far.
    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    /// `(μ_{n−1} − 1)/μ_n`, or `(μ_n − 1)/μ_n` when `literal`; zero at `n = 0`.
    pub fn weight(&self, literal: bool) -> T {
        if self.n == 0 {
            return T::zero();
        }
        let num = if literal { self.mu } else { self.mu_prev };
        (num - T::one()) / self.mu
    }

    pub fn advance(&mut self) {
        self.mu_prev = self.mu;
        self.mu = mu_next(self.mu);
        self.n += 1;
    }
}

/// Certified constants of one block step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConstants<T> {
    /// Bound with `‖G‖ ≤ A‖x_i^k − x_i^{k−1}‖`.
    pub a: T,
    pub rho: T,
    pub gamma: T,
    pub eta: T,
}

/// Extra inputs used by the fully convex formulas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullyConvexInputs<T> {
    pub lipschitz: T,
    pub beta: T,
    pub tau: T,
}

/// `(γ, η)` for the given mode.
///
/// General and block-convex modes use `γ = A²/(νρ)`, `η = (1−ν)ρ`. The fully
/// convex mode uses `γ = L(τ² + (β−τ)²/ν)` with `η = (1−ν)L`, and `η = L`
/// when `β = τ`.
pub fn step_constants<T: Real>(
    mode: ConvexityMode,
    a: T,
    rho: T,
    nu: T,
    extras: Option<FullyConvexInputs<T>>,
) -> Result<StepConstants<T>> {
    if !(nu > T::zero() && nu < T::one()) {
        return Err(Error::Config(format!("ν must lie in (0, 1), got {nu}")));
    }
    match (mode, extras) {
        (ConvexityMode::FullyConvex, Some(e)) => {
            if !(e.lipschitz > T::zero()) {
                return Err(Error::Config("fully convex step needs a positive Lipschitz constant".into()));
            }
            let l = e.lipschitz;
            let gap = e.beta - e.tau;
            let gamma = l * (e.tau * e.tau + gap * gap / nu);
            let eta = if gap == T::zero() { l } else { (T::one() - nu) * l };
            Ok(StepConstants { a, rho, gamma, eta })
        }
        _ => {
            if !(rho > T::zero()) {
                return Err(Error::Config(format!("step modulus must be positive, got {rho}")));
            }
            Ok(StepConstants {
                a,
                rho,
                gamma: a * a / (nu * rho),
                eta: (T::one() - nu) * rho,
            })
        }
    }
}

/// Largest `β` with `γ^{k+1} ≤ C η^k` for a Lipschitz-surrogate block whose
/// inertia bound is `A = κLβ`, in terms of consecutive Lipschitz constants.
///
/// Nonconvex `g`: `((κ−1)/κ)√(Cν(1−ν)L_prev/L_cur)`. Convex `g`:
/// `√(Cν(1−ν)L_prev/L_cur)`. Fully convex blocks with `β = τ`:
/// `√(C L_prev/L_cur)`.
pub fn beta_bound<T: Real>(mode: ConvexityMode, c: T, nu: T, kappa: T, l_prev: T, l_cur: T, g_convex: bool) -> T {
    let floor = T::modulus_floor();
    let ratio = l_prev.max(floor) / l_cur.max(floor);
    match mode {
        ConvexityMode::FullyConvex => (c * ratio).sqrt(),
        _ => {
            let base = (c * nu * (T::one() - nu) * ratio).sqrt();
            if g_convex {
                base
            } else {
                (kappa - T::one()) / kappa * base
            }
        }
    }
}

/// How `A` scales with `β` for the step being built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InertiaShape<T> {
    /// `A = slope·β`, `γ = A²/(νρ)`.
    Linear { slope: T },
    /// Fully convex Nesterov family with `τ = rβ` and curvature `L`:
    /// `γ = Lβ²(r² + (1−r)²/ν)`.
    FullyConvex { lipschitz: T, ratio: T },
}

/// Largest `β` whose step satisfies `γ ≤ C η_prev`.
///
/// `rho` is the current modulus (unused by the fully convex shape).
pub fn admissible_beta<T: Real>(shape: InertiaShape<T>, rho: T, eta_prev: T, c: T, nu: T) -> T {
    let budget = c * eta_prev.max(T::zero());
    match shape {
        InertiaShape::Linear { slope } => {
            if slope <= T::zero() {
                return T::infinity();
            }
            (budget * nu * rho.max(T::zero())).sqrt() / slope
        }
        InertiaShape::FullyConvex { lipschitz, ratio } => {
            let gap = T::one() - ratio;
            let per_beta_sq = lipschitz * (ratio * ratio + gap * gap / nu);
            if per_beta_sq <= T::zero() {
                return T::infinity();
            }
            (budget / per_beta_sq).sqrt()
        }
    }
}

/// Nesterov `τ` as a multiple of `β`.
fn default_one() -> f64 {
    1.0
}

fn default_shrink() -> f64 {
    0.5
}

fn default_max_steps() -> usize {
    200
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InertiaKind {
    NoInertia,
    /// `G = s·βΔ` where `s` is the family's curvature (`κL`, `ρ`, `κH`, or 1 for Bregman).
    HeavyBall,
    /// `G = ∇_i f(y) − ∇_i f(x̄, y_{≠i}) + κLβΔ` with `x̄ = x^k + τΔ`, `τ = ratio·β`.
    NesterovTwoPoint {
        #[serde(default = "default_one")]
        tau_ratio: f64,
    },
    /// `G = α(∇_i f(x^{k−1}_i, y_{≠i}) − ∇_i f(y)) + κLβΔ` with `α = ratio·β`, or `κβ` when unset.
    HessianDamping {
        #[serde(default)]
        alpha_ratio: Option<f64>,
    },
    /// `G = κL(∇φ(x̄) − ∇φ(x^k))` with `τ` found by backtracking from 1.
    BregmanLineSearch {
        #[serde(default = "default_shrink")]
        shrink: f64,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BetaRule {
    Zero,
    Constant { value: f64 },
    /// `(μ_{k−1} − 1)/μ_k`.
    Nesterov,
    /// `(μ_k − 1)/μ_k`.
    NesterovLiteral,
}

impl BetaRule {
    pub fn weight<T: Real>(&self, mu: &MuSchedule<T>) -> T {
        match self {
            BetaRule::Zero => T::zero(),
            BetaRule::Constant { value } => T::lit(*value),
            BetaRule::Nesterov => mu.weight(false),
            BetaRule::NesterovLiteral => mu.weight(true),
        }
    }
}

/// Shared extrapolation settings for a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationConfig {
    pub kind: InertiaKind,
    pub beta: BetaRule,
    /// `C ∈ (0, 1)`.
    pub c: f64,
    /// `ν ∈ (0, 1)`.
    pub nu: f64,
    /// Take `β = min(weight, bound_scale · admissible bound)`.
    #[serde(default = "default_true")]
    pub cap: bool,
    #[serde(default = "default_one")]
    pub bound_scale: f64,
}

fn default_true() -> bool {
    true
}

pub const DEFAULT_C: f64 = 0.9999 * 0.9999;
pub const DEFAULT_NU: f64 = 0.5;

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            kind: InertiaKind::NesterovTwoPoint { tau_ratio: 1.0 },
            beta: BetaRule::Nesterov,
            c: DEFAULT_C,
            nu: DEFAULT_NU,
            cap: true,
            bound_scale: 1.0,
        }
    }
}

impl ExtrapolationConfig {
    pub fn none() -> Self {
        Self {
            kind: InertiaKind::NoInertia,
            beta: BetaRule::Zero,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.c) {
            return Err(Error::Config(format!("C must lie in (0, 1), got {}", self.c)));
        }
        if !open(self.nu) {
            return Err(Error::Config(format!("ν must lie in (0, 1), got {}", self.nu)));
        }
        if !(self.bound_scale > 0.0) {
            return Err(Error::Config("bound_scale must be positive".into()));
        }
        match self.kind {
            InertiaKind::NesterovTwoPoint { tau_ratio } if !(tau_ratio >= 0.0) => {
                Err(Error::Config("τ ratio must be nonnegative".into()))
            }
            InertiaKind::HessianDamping { alpha_ratio: Some(r) } if !(r >= 0.0) => {
                Err(Error::Config("α ratio must be nonnegative".into()))
            }
            InertiaKind::BregmanLineSearch { shrink, max_steps } if !open(shrink) || max_steps == 0 => {
                Err(Error::Config("line-search shrink must lie in (0, 1) with at least one step".into()))
            }
            _ => match self.beta {
                BetaRule::Constant { value } if !(value >= 0.0) => {
                    Err(Error::Config("constant β must be nonnegative".into()))
                }
                _ => Ok(()),
            },
        }
    }
}

/// How the heavy-ball term acts on `Δ = x^k − x^{k−1}`.
#[derive(Clone, Copy, Debug)]
pub enum InertiaMetric<'a, T> {
    /// `s·Δ`
    Scalar(T),
    /// `κ·HΔ`
    Operator { kappa: T, form: &'a QuadraticForm<T> },
}

/// `x_i ↦ ∇_i f(x_i, y_{≠i})`.
pub type BlockGradient<'a, T> = &'a dyn Fn(ArrayView2<T>) -> Result<Array2<T>>;

/// Everything an extrapolation operator may need at one block step.
pub struct InertiaState<'a, T: Real> {
    /// `x_i^k` (the block's value in the anchor `y = x^{k,i−1}`).
    pub current: ArrayView2<'a, T>,
    /// `x_i^{k−1}`.
    pub previous: ArrayView2<'a, T>,
    pub kappa: T,
    pub lipschitz: T,
    pub mode: ConvexityMode,
    pub metric: InertiaMetric<'a, T>,
    pub gradient: Option<BlockGradient<'a, T>>,
    /// `∇_i f(y)`, if already known.
    pub grad_current: Option<ArrayView2<'a, T>>,
    pub kernel: Option<&'a dyn Kernel<T>>,
}

impl<'a, T: Real> InertiaState<'a, T> {
    /// Heavy-ball state with a scalar curvature `s` and no gradient access.
    pub fn scalar(current: ArrayView2<'a, T>, previous: ArrayView2<'a, T>, kappa: T, lipschitz: T) -> Self {
        Self {
            current,
            previous,
            kappa,
            lipschitz,
            mode: ConvexityMode::General,
            metric: InertiaMetric::Scalar(kappa * lipschitz),
            gradient: None,
            grad_current: None,
            kernel: None,
        }
    }

    fn grad(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let g = self
            .gradient
            .ok_or_else(|| Error::Config("this extrapolation needs block gradients".into()))?;
        g(x)
    }

    fn grad_current(&self) -> Result<Array2<T>> {
        match self.grad_current {
            Some(g) => Ok(g.to_owned()),
            None => self.grad(self.current),
        }
    }
}

/// Extrapolation parameters of one step.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct InertiaParams<T> {
    pub beta: T,
    pub tau: T,
    pub alpha: T,
}

impl<T: Real> InertiaParams<T> {
    /// Derives `τ` and `α` from `β` for the given kind.
    pub fn from_beta(kind: &InertiaKind, beta: T, kappa: T) -> Self {
        match kind {
            InertiaKind::NesterovTwoPoint { tau_ratio } => Self {
                beta,
                tau: T::lit(*tau_ratio) * beta,
                alpha: T::zero(),
            },
            InertiaKind::HessianDamping { alpha_ratio } => Self {
                beta,
                tau: T::zero(),
                alpha: match alpha_ratio {
                    Some(r) => T::lit(*r) * beta,
                    None => kappa * beta,
                },
            },
            InertiaKind::NoInertia => Self::default_zero(),
            _ => Self {
                beta,
                tau: beta,
                alpha: T::zero(),
            },
        }
    }

    fn default_zero() -> Self {
        Self {
            beta: T::zero(),
            tau: T::zero(),
            alpha: T::zero(),
        }
    }
}

/// `G_i^k` with its certified bound `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Inertia<T> {
    pub g: Array2<T>,
    pub a: T,
    pub params: InertiaParams<T>,
}

/// Slope `A/β` of a `β`-parametrized operator.
pub fn inertia_slope<T: Real>(kind: &InertiaKind, state: &InertiaState<'_, T>, params: &InertiaParams<T>) -> Result<T> {
    let tight = state.mode != ConvexityMode::General;
    let kl = state.kappa * state.lipschitz;
    let safe_ratio = |num: T| if params.beta > T::zero() { num / params.beta } else { T::zero() };
    Ok(match kind {
        InertiaKind::NoInertia | InertiaKind::BregmanLineSearch { .. } => T::zero(),
        InertiaKind::HeavyBall => match state.metric {
            InertiaMetric::Scalar(s) => s,
            InertiaMetric::Operator { kappa, form } => kappa * form.norm()?,
        },
        InertiaKind::NesterovTwoPoint { .. } => {
            if tight && params.tau <= params.beta {
                kl
            } else {
                state.lipschitz * (safe_ratio(params.tau) + state.kappa)
            }
        }
        InertiaKind::HessianDamping { .. } => {
            if tight && params.alpha <= state.kappa * params.beta {
                kl
            } else {
                state.lipschitz * (safe_ratio(params.alpha) + state.kappa)
            }
        }
    })
}

fn heavy_ball_term<T: Real>(metric: InertiaMetric<'_, T>, beta: T, delta: &Array2<T>) -> Result<Array2<T>> {
    match metric {
        InertiaMetric::Scalar(s) => Ok(delta * (s * beta)),
        InertiaMetric::Operator { kappa, form } => Ok(form.apply(delta.view())? * (kappa * beta)),
    }
}

/// Builds `G_i^k` and `A` for `kind`.
///
/// For [`InertiaKind::BregmanLineSearch`] the step `τ` must already be chosen
/// (see [`bregman_linesearch_tau`]); `A = κL‖∇φ(x̄) − ∇φ(x^k)‖/‖Δ‖`.
pub fn build_inertia<T: Real>(kind: &InertiaKind, params: InertiaParams<T>, state: &InertiaState<'_, T>) -> Result<Inertia<T>> {
    if state.current.dim() != state.previous.dim() {
        return Err(Error::ShapeMismatch {
            context: "build_inertia",
            expected: state.current.dim(),
            found: state.previous.dim(),
        });
    }
    let delta = &state.current - &state.previous;
    let slope = inertia_slope(kind, state, &params)?;
    let a = slope * params.beta;
    let kl = state.kappa * state.lipschitz;
    let g = match kind {
        InertiaKind::NoInertia => {
            return Ok(Inertia {
                g: Array2::zeros(delta.dim()),
                a: T::zero(),
                params: InertiaParams::default_zero(),
            })
        }
        InertiaKind::HeavyBall => heavy_ball_term(state.metric, params.beta, &delta)?,
        InertiaKind::NesterovTwoPoint { .. } => {
            let bar = &state.current + &(&delta * params.tau);
            let g_bar = state.grad(bar.view())?;
            let g_cur = state.grad_current()?;
            g_cur - g_bar + &delta * (kl * params.beta)
        }
        InertiaKind::HessianDamping { .. } => {
            let g_prev = state.grad(state.previous)?;
            let g_cur = state.grad_current()?;
            (g_prev - g_cur) * params.alpha + &delta * (kl * params.beta)
        }
        InertiaKind::BregmanLineSearch { .. } => {
            let kernel = state
                .kernel
                .ok_or_else(|| Error::Config("Bregman line search needs a kernel".into()))?;
            let bar = &state.current + &(&delta * params.tau);
            let diff = kernel.gradient(bar.view()) - kernel.gradient(state.current);
            let dn = frob_sq(&delta).sqrt();
            let a = if dn > T::zero() { kl * frob_sq(&diff).sqrt() / dn } else { T::zero() };
            return Ok(Inertia {
                g: diff * kl,
                a,
                params,
            });
        }
    };
    Ok(Inertia { g, a, params })
}

/// Result of a backtracking search over `τ ∈ {1, τ̄, τ̄², …}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch<T> {
    pub tau: T,
    /// `‖∇φ(x̄) − ∇φ(x^k)‖/‖x^k − x^{k−1}‖`.
    pub ratio: T,
    pub steps: usize,
}

/// First `τ` in `{1, τ̄, τ̄², …}` with `scale·‖∇φ(x̄) − ∇φ(x^k)‖² ≤ budget·‖Δ‖²`.
///
/// Zero displacement returns `τ = 1` with a zero ratio. If no trial is
/// accepted within `max_steps`, `τ = 0` is returned.
pub fn linesearch_tau<T: Real>(
    kernel: &dyn Kernel<T>,
    current: ArrayView2<T>,
    previous: ArrayView2<T>,
    scale: T,
    budget: T,
    shrink: T,
    max_steps: usize,
) -> Result<LineSearch<T>> {
    if !(shrink > T::zero() && shrink < T::one()) {
        return Err(Error::Config("line-search shrink must lie in (0, 1)".into()));
    }
    let delta = &current - &previous;
    let dsq = frob_sq(&delta);
    if dsq == T::zero() {
        return Ok(LineSearch {
            tau: T::one(),
            ratio: T::zero(),
            steps: 0,
        });
    }
    let g_cur = kernel.gradient(current);
    let mut tau = T::one();
    for step in 0..max_steps {
        let bar = &current + &(&delta * tau);
        let diff = kernel.gradient(bar.view()) - &g_cur;
        let diff_sq = frob_sq(&diff);
        if diff_sq.is_nan() {
            return Err(Error::Numerical("kernel gradient is NaN during line search".into()));
        }
        if scale * diff_sq <= budget * dsq {
            return Ok(LineSearch {
                tau,
                ratio: (diff_sq / dsq).sqrt(),
                steps: step,
            });
        }
        tau *= shrink;
    }
    Ok(LineSearch {
        tau: T::zero(),
        ratio: T::zero(),
        steps: max_steps,
    })
}

/// Backtracking rule `κL‖∇φ(x̄) − ∇φ(x^k)‖² ≤ C‖x^k − x^{k−1}‖² ρ^k ρ^{k+1}`.
///
/// The returned ratio is the bound `A = ‖∇φ(x̄) − ∇φ(x^k)‖/‖x^k − x^{k−1}‖`.
#[allow(clippy::too_many_arguments)]
pub fn bregman_linesearch_tau<T: Real>(
    kernel: &dyn Kernel<T>,
    current: ArrayView2<T>,
    previous: ArrayView2<T>,
    kappa: T,
    lipschitz: T,
    c: T,
    rho_k: T,
    rho_k1: T,
    shrink: T,
) -> Result<LineSearch<T>> {
    linesearch_tau(kernel, current, previous, kappa * lipschitz, c * rho_k * rho_k1, shrink, 200)
}
