//! The inertial block majorization-minimization loop.
//!
//! Each block update minimizes `u_i(x_i, y) − ⟨G_i, x_i⟩ + g_i(x_i)` at the
//! anchor `y = x^{k,i−1}`. Blocks are visited cyclically or along an
//! essentially cyclic order; an optional restart redoes a non-decreasing outer
//! iteration without inertia. Every update is logged with its certified
//! constants so the decrease inequalities can be audited afterwards.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::block::{check_shape, dist_sq, frob_dot, frob_sq, objective_value, BlockVector, Objective, Problem};
use crate::error::{Error, Result};
use crate::extrapolation::{
    admissible_beta, build_inertia, inertia_slope, linesearch_tau, step_constants, ExtrapolationConfig,
    FullyConvexInputs, Inertia, InertiaKind, InertiaMetric, InertiaParams, InertiaShape, InertiaState, MuSchedule,
    StepConstants,
};
use crate::scalar::Real;
use crate::surrogate::{prepare, ConvexityMode, Prepared, QuadraticKernel, SmoothPart, SurrogateConfig, SurrogateKind};

/// Block visiting order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    /// `1, 2, …, m` every outer iteration.
    Cyclic,
    /// One outer iteration walks `order` once; every `window` consecutive
    /// entries of the repeated order touch every block.
    EssentiallyCyclic { order: Vec<usize>, window: usize },
}

impl Schedule {
    /// Each block `i` repeated `counts[i]` times in turn.
    pub fn repeated(counts: &[usize]) -> Self {
        let order: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
            .collect();
        let window = order.len();
        Schedule::EssentiallyCyclic { order, window }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let Schedule::EssentiallyCyclic { order, window } = self else {
            return Ok(());
        };
        if order.is_empty() {
            return Err(Error::Config("essentially cyclic order is empty".into()));
        }
        if let Some(&bad) = order.iter().find(|&&b| b >= m) {
            return Err(Error::Config(format!("order names block {bad} but there are {m} blocks")));
        }
        if *window < m {
            return Err(Error::Config(format!("window {window} is shorter than the block count {m}")));
        }
        let n = order.len();
        for start in 0..n {
            let mut seen = vec![false; m];
            for k in 0..*window {
                seen[order[(start + k) % n]] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Config(format!(
                    "window of {window} updates starting at position {start} misses a block"
                )));
            }
        }
        Ok(())
    }

    pub fn sequence(&self, m: usize) -> Vec<usize> {
        match self {
            Schedule::Cyclic => (0..m).collect(),
            Schedule::EssentiallyCyclic { order, .. } => order.clone(),
        }
    }
}

/// How often the per-update decrease inequality is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "every", rename_all = "snake_case")]
pub enum MonitorLevel {
    Off,
    /// Every update of every `n`-th outer iteration.
    Sampled(usize),
    Full,
}

impl MonitorLevel {
    fn active(&self, iteration: usize) -> bool {
        match self {
            MonitorLevel::Off => false,
            MonitorLevel::Sampled(n) => *n > 0 && iteration.is_multiple_of(*n),
            MonitorLevel::Full => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub time_budget_seconds: Option<f64>,
    /// Stop when `max_i ‖Δ_i‖/(1 + ‖x_i‖)` drops below this.
    pub stop_tolerance: Option<f64>,
    pub restart: bool,
    pub monitor: MonitorLevel,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            time_budget_seconds: None,
            stop_tolerance: Some(1e-9),
            restart: false,
            monitor: MonitorLevel::Sampled(10),
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.time_budget_seconds {
            if !(t >= 0.0) {
                return Err(Error::Config("time budget must be nonnegative".into()));
            }
        }
        if let Some(t) = self.stop_tolerance {
            if !(t >= 0.0) {
                return Err(Error::Config("stop tolerance must be nonnegative".into()));
            }
        }
        if self.max_iters == usize::MAX && self.time_budget_seconds.is_none() && self.stop_tolerance.is_none() {
            return Err(Error::Config("no stopping criterion is active".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    TimeBudget,
    Tolerance,
}

/// One block update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockUpdate {
    pub block: usize,
    /// `‖x_i^{k+1} − x_i^k‖²`
    pub step_norm_sq: f64,
    /// `‖x_i^k − x_i^{k−1}‖²`
    pub prev_step_norm_sq: f64,
    pub beta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub a: f64,
    pub rho: f64,
    pub gamma: f64,
    pub eta: f64,
    /// `η` of the previous update of the same block.
    pub eta_prev: Option<f64>,
    /// `ρ/2`, the alternative restart-step constant, on inertia-free redo steps.
    pub eta_restart_alt: Option<f64>,
    pub lipschitz: f64,
    pub beta_bound: f64,
    /// `‖G_i^k‖`, when the operator was materialized.
    pub g_norm: Option<f64>,
    /// `F` before and after the update, on monitored iterations.
    pub f_before: Option<f64>,
    pub f_after: Option<f64>,
    pub nsdp_residual: Option<f64>,
    /// `γ ≤ C η_prev` (true when there is no previous update).
    pub condition4: bool,
    pub relative_change: f64,
}

/// One completed outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub metric: Option<f64>,
    pub updates: Vec<BlockUpdate>,
    pub restarted: bool,
    /// The inertia-free redo did not decrease `F` either and was discarded.
    pub rejected: bool,
    pub elapsed_s: f64,
    pub max_g_norm: Option<f64>,
}

impl IterationRecord {
    pub fn max_gamma(&self) -> f64 {
        self.updates.iter().map(|u| u.gamma).fold(0.0, f64::max)
    }

    pub fn min_eta(&self) -> f64 {
        self.updates.iter().map(|u| u.eta).fold(f64::INFINITY, f64::min)
    }

    pub fn max_a(&self) -> f64 {
        self.updates.iter().map(|u| u.a).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub initial_objective: f64,
    pub initial_metric: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Objective evaluations spent on restart tests and monitoring.
    pub objective_evals: usize,
}

impl RunLog {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn restarts(&self) -> usize {
        self.records.iter().filter(|r| r.restarted).count()
    }

    pub fn updates(&self) -> impl Iterator<Item = &BlockUpdate> {
        self.records.iter().flat_map(|r| r.updates.iter())
    }
}

/// Mutable per-run state: the iterate and the per-block registers.
#[derive(Clone, Debug)]
pub struct SolverState<T> {
    pub x: BlockVector<T>,
    /// Value of each block before its most recent update (`x_i^{k−1}`).
    pub prev: Vec<Array2<T>>,
    pub eta_prev: Vec<Option<T>>,
    pub mu: Vec<MuSchedule<T>>,
}

impl<T: Real> SolverState<T> {
    pub fn new(x0: BlockVector<T>, x_minus1: Option<BlockVector<T>>) -> Result<Self> {
        let prev = match x_minus1 {
            Some(xm) => {
                if !xm.same_shape(&x0) {
                    return Err(Error::InvalidArgument("x^{-1} and x^0 have different shapes".into()));
                }
                xm.into_blocks()
            }
            None => x0.blocks().to_vec(),
        };
        let m = x0.num_blocks();
        Ok(Self {
            x: x0,
            prev,
            eta_prev: vec![None; m],
            mu: vec![MuSchedule::new(); m],
        })
    }
}

/// Per-call switches for [`titan_block_step`].
#[derive(Clone, Copy, Debug, Default)]
pub struct StepContext {
    pub iteration: usize,
    /// Force `G = 0` (restart redo).
    pub no_inertia: bool,
    /// Materialize `G` to log its norm.
    pub want_g: bool,
}

/// Diagnostics of one block step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics<T> {
    pub params: InertiaParams<T>,
    pub beta_bound: T,
    pub lipschitz: T,
    pub g_norm: Option<T>,
    pub eta_prev: Option<T>,
    pub condition4: bool,
}

/// `(F_before + (γ/2)‖Δ_prev‖²) − (F_after + (η/2)‖Δ_cur‖²)`.
pub fn nsdp_check<T: Real>(f_before: T, f_after: T, gamma: T, eta: T, step_prev_normsq: T, step_cur_normsq: T) -> T {
    let half = T::lit(0.5);
    (f_before + half * gamma * step_prev_normsq) - (f_after + half * eta * step_cur_normsq)
}

/// Both sides of the telescoped decrease inequality after `k` outer iterations:
/// `F(x^K) + (1−C)ΣΣ(η/2)‖Δ‖²` and `F(x^0) + Σ_i (γ_i^0/2)‖x_i^0 − x_i^{−1}‖²`.
pub fn telescoping_sides(log: &RunLog, c: f64, k: usize) -> Result<(f64, f64)> {
    if k > log.records.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {} recorded iterations",
            log.records.len()
        )));
    }
    let f_k = if k == 0 { log.initial_objective } else { log.records[k - 1].objective };
    let mut acc = 0.0;
    let mut seen = Vec::new();
    let mut initial = 0.0;
    for rec in &log.records[..k] {
        for u in &rec.updates {
            acc += 0.5 * u.eta * u.step_norm_sq;
            if !seen.contains(&u.block) {
                seen.push(u.block);
                initial += 0.5 * u.gamma * u.prev_step_norm_sq;
            }
        }
    }
    Ok((f_k + (1.0 - c) * acc, log.initial_objective + initial))
}

/// True when the telescoped inequality holds after `k` iterations within
/// `1e−8` relative slack.
pub fn telescoping_check(log: &RunLog, c: f64, k: usize) -> Result<bool> {
    let (lhs, rhs) = telescoping_sides(log, c, k)?;
    Ok(lhs <= rhs + 1e-8 * (1.0 + rhs.abs()))
}

/// `(Σ‖Δ‖², bound)` where the bound is
/// `(F(x^0) + Σ_i (γ_i^0/2)‖x_i^0 − x_i^{−1}‖² − F_min)/((1−C)·min η/2)`.
pub fn finite_length_bound(log: &RunLog, c: f64, f_min: f64) -> Result<(f64, f64)> {
    let (_, rhs) = telescoping_sides(log, c, log.records.len())?;
    let total: f64 = log.updates().map(|u| u.step_norm_sq).sum();
    let l_low = log.updates().map(|u| 0.5 * u.eta).fold(f64::INFINITY, f64::min);
    if !(l_low > 0.0) {
        return Err(Error::Numerical("finite-length bound needs a positive η".into()));
    }
    Ok((total, (rhs - f_min) / ((1.0 - c) * l_low)))
}

fn finite_objective<T: Real>(p: &dyn Problem<T>, x: &BlockVector<T>, iteration: usize, block: Option<usize>) -> Result<T> {
    match objective_value(p, x)? {
        Objective::Finite(v) if v.is_finite() => Ok(v),
        Objective::Finite(v) => Err(Error::NonFinite {
            iteration,
            block,
            detail: format!("objective evaluated to {v}"),
        }),
        Objective::Infeasible => Err(Error::NonFinite {
            iteration,
            block,
            detail: "iterate left the feasible set".into(),
        }),
    }
}

fn inner_err(block: usize, iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InnerSolver { .. } | Error::Unsupported(_) | Error::Config(_) => e,
        other => Error::InnerSolver {
            block,
            iteration,
            message: other.to_string(),
        },
    }
}

/// Minimizes `f(x, y_{≠i}) + (ρ/2)‖x − z‖² + g_i(x)` by monotone proximal
/// gradient with backtracking, starting from `y_i`.
fn proximal_fallback<T: Real>(p: &dyn Problem<T>, i: usize, y: &BlockVector<T>, rho: T, z: ArrayView2<T>) -> Result<Array2<T>> {
    let half = T::lit(0.5);
    let value = |x: ArrayView2<T>| -> Result<T> {
        Ok(p.smooth_value(&y.with_block(i, x)?)? + half * rho * dist_sq(x, z))
    };
    let mut x = y.block(i).clone();
    let mut fx = value(x.view())?;
    let mut step_l = rho;
    let mut scale = None;
    for _ in 0..20_000 {
        let grad = p.block_gradient(i, &y.with_block(i, x.view())?)? + (&x - &z) * rho;
        let gnorm = frob_sq(&grad).sqrt();
        let scale = *scale.get_or_insert(T::one() + gnorm);
        let mut accepted = None;
        for _ in 0..60 {
            let cand = p.nonsmooth_step(i, grad.view(), step_l, x.view())?;
            let d = &cand - &x;
            let fc = value(cand.view())?;
            let model = fx + frob_dot(grad.view(), d.view()) + half * step_l * frob_sq(&d);
            if fc <= model + T::epsilon() * (T::one() + fx.abs()) {
                accepted = Some((cand, fc, frob_sq(&d)));
                break;
            }
            step_l *= T::lit(2.0);
        }
        let Some((cand, fc, dsq)) = accepted else {
            return Err(Error::Numerical("proximal inner solver failed to backtrack".into()));
        };
        x = cand;
        fx = fc;
        // Norm of the gradient mapping.
        if step_l * dsq.sqrt() <= T::lit(1e-12) * scale {
            break;
        }
        step_l = (step_l / T::lit(1.5)).max(rho);
    }
    Ok(x)
}

/// `argmin ⟨c, x⟩ + w·D_φ(x, z) + g_i(x)` via the Euclidean oracle, the
/// closed-form inverse gradient (unconstrained blocks) or the problem's own
/// mirror solver.
fn mirror_solve<T: Real>(
    p: &dyn Problem<T>,
    i: usize,
    kernel: &dyn crate::surrogate::Kernel<T>,
    c: ArrayView2<T>,
    w: T,
    z: ArrayView2<T>,
) -> Result<Array2<T>> {
    if let Some(s) = kernel.euclidean_scale() {
        return p.nonsmooth_step(i, c, w * s, z);
    }
    if p.is_unconstrained(i) {
        let target = kernel.gradient(z) - &c.mapv(|v| v / w);
        if let Some(x) = kernel.gradient_inverse(target.view()) {
            return Ok(x);
        }
    }
    p.mirror_step(i, c, w, kernel, z)?.ok_or_else(|| {
        Error::Unsupported(format!(
            "block {i}: non-Euclidean kernel on a constrained block needs Problem::mirror_step"
        ))
    })
}

struct Plan<T> {
    kind: InertiaKind,
    fully: bool,
    ratio: T,
}

fn plan<T: Real>(cfg: &SurrogateConfig<T>, ex: &ExtrapolationConfig, no_inertia: bool) -> Result<Plan<T>> {
    let kind = if no_inertia { InertiaKind::NoInertia } else { ex.kind };
    let base = cfg.kind.base();
    match (&kind, base) {
        (InertiaKind::NesterovTwoPoint { .. } | InertiaKind::HessianDamping { .. }, SurrogateKind::Lipschitz { .. }) => {}
        (InertiaKind::NesterovTwoPoint { .. } | InertiaKind::HessianDamping { .. }, _) => {
            return Err(Error::Config("gradient-based extrapolation needs a Lipschitz gradient surrogate".into()))
        }
        (InertiaKind::BregmanLineSearch { .. }, SurrogateKind::Bregman { .. }) => {}
        (InertiaKind::BregmanLineSearch { .. }, _) => {
            return Err(Error::Config("line-searched extrapolation needs a Bregman surrogate".into()))
        }
        _ => {}
    }
    let lipschitz_base = matches!(base, SurrogateKind::Lipschitz { .. });
    let (fully, ratio) = match kind {
        InertiaKind::NoInertia => (lipschitz_base, T::one()),
        InertiaKind::HeavyBall => (lipschitz_base, T::zero()),
        InertiaKind::NesterovTwoPoint { tau_ratio } => (lipschitz_base, T::lit(tau_ratio)),
        _ => (false, T::one()),
    };
    Ok(Plan {
        kind,
        fully: fully && cfg.mode == ConvexityMode::FullyConvex,
        ratio,
    })
}

fn constants_for<T: Real>(
    plan: &Plan<T>,
    prep: &Prepared<T>,
    nu: T,
    a: T,
    params: &InertiaParams<T>,
) -> Result<StepConstants<T>> {
    if plan.fully {
        let (beta, tau) = match plan.kind {
            InertiaKind::NoInertia => (T::zero(), T::zero()),
            InertiaKind::HeavyBall => (params.beta, T::zero()),
            _ => (params.beta, params.tau),
        };
        return step_constants(
            ConvexityMode::FullyConvex,
            a,
            prep.modulus,
            nu,
            Some(FullyConvexInputs {
                lipschitz: prep.curvature,
                beta,
                tau,
            }),
        );
    }
    if prep.modulus <= T::zero() && a == T::zero() {
        return Ok(StepConstants {
            a,
            rho: T::zero(),
            gamma: T::zero(),
            eta: T::zero(),
        });
    }
    step_constants(ConvexityMode::General, a, prep.modulus, nu, None)
}

/// One block update `x_i^{k+1} = argmin u_i(x_i, y) − ⟨G_i, x_i⟩ + g_i(x_i)`
/// at the anchor `y = state.x`.
///
/// The iterate itself is not modified; see [`titan_run`] for the bookkeeping.
pub fn titan_block_step<T: Real>(
    p: &dyn Problem<T>,
    cfg: &SurrogateConfig<T>,
    ex: &ExtrapolationConfig,
    state: &SolverState<T>,
    i: usize,
    ctx: StepContext,
) -> Result<(Array2<T>, StepConstants<T>, StepDiagnostics<T>)> {
    let y = &state.x;
    let iteration = ctx.iteration;
    let g_convex = p.penalty_is_convex(i);
    let prep = prepare(&cfg.kind, i, y, g_convex)?;
    let plan = plan(cfg, ex, ctx.no_inertia)?;
    if prep.modulus <= T::zero() && plan.kind != InertiaKind::NoInertia && !plan.fully {
        return Err(Error::Config(format!(
            "block {i}: κ = 1 with a nonconvex g_i admits no inertia"
        )));
    }
    let part = SmoothPart::for_kind(&cfg.kind, p)?;
    let base = cfg.kind.base();
    if cfg.kind.is_composite() && !matches!(base, SurrogateKind::Lipschitz { .. }) {
        return Err(Error::Unsupported(
            "composite surrogates are solved with a Lipschitz inner surrogate".into(),
        ));
    }
    let yi = y.block(i);
    let prev = &state.prev[i];
    let nu = T::lit(ex.nu);
    let c = T::lit(ex.c);

    let metric = match base {
        SurrogateKind::Bregman { .. } => InertiaMetric::Scalar(T::one()),
        SurrogateKind::Quadratic { kappa, .. } => InertiaMetric::Operator {
            kappa: *kappa,
            form: prep.form.as_ref().expect("quadratic surrogate prepares its form"),
        },
        _ => InertiaMetric::Scalar(prep.curvature),
    };
    let kernel: Option<&dyn crate::surrogate::Kernel<T>> = match base {
        SurrogateKind::Bregman { kernel, .. } => Some(kernel.as_ref()),
        _ => None,
    };
    let grad_fn = |xi: ArrayView2<T>| -> Result<Array2<T>> { part.gradient(i, &y.with_block(i, xi)?) };
    let needs_grad_current = !matches!(base, SurrogateKind::Proximal { .. })
        && (ctx.want_g || !matches!(plan.kind, InertiaKind::NesterovTwoPoint { .. }));
    let grad_current = if needs_grad_current { Some(part.gradient(i, y)?) } else { None };
    let mut state_i = InertiaState {
        current: yi.view(),
        previous: prev.view(),
        kappa: prep.kappa,
        lipschitz: prep.lipschitz,
        mode: cfg.mode,
        metric,
        gradient: Some(&grad_fn),
        grad_current: grad_current.as_ref().map(|g| g.view()),
        kernel,
    };
    if matches!(base, SurrogateKind::Proximal { .. }) {
        state_i.gradient = None;
    }

    // Condition-4 budget against the previous update of this block.
    let zero_params = InertiaParams::from_beta(&InertiaKind::NoInertia, T::zero(), prep.kappa);
    let eta_now = constants_for(&plan, &prep, nu, T::zero(), &zero_params)?.eta;
    let eta_prev = state.eta_prev[i];
    let eta_ref = eta_prev.unwrap_or(eta_now);
    let unit = InertiaParams::from_beta(&plan.kind, T::one(), prep.kappa);
    let shape = if plan.fully {
        InertiaShape::FullyConvex {
            lipschitz: prep.curvature,
            ratio: plan.ratio,
        }
    } else {
        InertiaShape::Linear {
            slope: inertia_slope(&plan.kind, &state_i, &unit)?,
        }
    };
    let bound = admissible_beta(shape, prep.modulus, eta_ref, c, nu);
    let weight = ex.beta.weight(&state.mu[i]);
    let mut beta = match plan.kind {
        InertiaKind::NoInertia | InertiaKind::BregmanLineSearch { .. } => T::zero(),
        _ if ex.cap => weight.min(T::lit(ex.bound_scale) * bound),
        _ => weight,
    };
    let enforce = ex.cap && ex.bound_scale <= 1.0 && eta_prev.is_some();
    let budget = c * eta_ref;

    let mut line_tau = None;
    if let InertiaKind::BregmanLineSearch { shrink, max_steps } = plan.kind {
        let ls = linesearch_tau(
            kernel.expect("checked by plan"),
            yi.view(),
            prev.view(),
            prep.curvature * prep.curvature,
            budget * nu * prep.modulus,
            T::lit(shrink),
            max_steps,
        )?;
        line_tau = Some(ls.tau);
    }

    let mut attempts = 0;
    let (inertia, consts, linear) = loop {
        let params = match line_tau {
            Some(tau) => InertiaParams {
                beta: T::zero(),
                tau,
                alpha: T::zero(),
            },
            None => InertiaParams::from_beta(&plan.kind, beta, prep.kappa),
        };
        let fast_nesterov = matches!(plan.kind, InertiaKind::NesterovTwoPoint { .. }) && grad_current.is_none();
        let (inertia, linear) = if fast_nesterov {
            // c = ∇f(y) − G = ∇f(x̄) − κLβΔ without forming G.
            let delta = yi - prev;
            let bar = yi + &(&delta * params.tau);
            let g_bar = grad_fn(bar.view())?;
            let slope = inertia_slope(&plan.kind, &state_i, &params)?;
            let linear = g_bar - &delta * (prep.curvature * params.beta);
            (
                Inertia {
                    g: Array2::zeros((0, 0)),
                    a: slope * params.beta,
                    params,
                },
                Some(linear),
            )
        } else {
            (build_inertia(&plan.kind, params, &state_i)?, None)
        };
        let consts = constants_for(&plan, &prep, nu, inertia.a, &inertia.params)?;
        attempts += 1;
        if !enforce || consts.gamma <= budget || attempts > 60 {
            break (inertia, consts, linear);
        }
        let shrink = (budget / consts.gamma).sqrt().min(T::one()) * (T::one() - T::lit(1e-12));
        match line_tau.as_mut() {
            Some(tau) => *tau *= shrink,
            None => beta *= shrink,
        }
    };
    let materialized = linear.is_none();
    let g_norm = materialized.then(|| frob_sq(&inertia.g).sqrt());

    let linear_term = |g: &Array2<T>| -> Array2<T> {
        match &linear {
            Some(l) => l.clone(),
            None => grad_current.as_ref().expect("gradient available") - g,
        }
    };
    let to_inner = inner_err(i, iteration);
    let x_new = match base {
        SurrogateKind::Proximal { .. } => {
            let rho = prep.curvature;
            let center = yi + &inertia.g.mapv(|v| v / rho);
            match p.proximal_step(i, y, rho, center.view()).map_err(&to_inner)? {
                Some(x) => x,
                None => proximal_fallback(p, i, y, rho, center.view()).map_err(&to_inner)?,
            }
        }
        SurrogateKind::Lipschitz { .. } => {
            let cvec = linear_term(&inertia.g);
            match p.composite() {
                Some(comp) if cfg.kind.is_composite() => {
                    let mapped = comp.map(y)?;
                    let w = comp.outer_block_gradient(i, &mapped);
                    comp.linearized_step(i, w.view(), cvec.view(), prep.curvature, yi.view())
                        .map_err(&to_inner)?
                }
                _ => p.nonsmooth_step(i, cvec.view(), prep.curvature, yi.view()).map_err(&to_inner)?,
            }
        }
        SurrogateKind::Bregman { kernel, .. } => {
            let cvec = linear_term(&inertia.g);
            mirror_solve(p, i, kernel.as_ref(), cvec.view(), prep.curvature, yi.view()).map_err(&to_inner)?
        }
        SurrogateKind::Quadratic { kappa, .. } => {
            let cvec = linear_term(&inertia.g);
            let form = prep.form.clone().expect("quadratic surrogate prepares its form");
            if let Some(h) = form.as_scalar() {
                p.nonsmooth_step(i, cvec.view(), *kappa * h, yi.view()).map_err(&to_inner)?
            } else if p.is_unconstrained(i) {
                let shift = form.solve(cvec.view())?.mapv(|v| v / *kappa);
                yi - &shift
            } else {
                let k = QuadraticKernel::new(form)?;
                mirror_solve(p, i, &k, cvec.view(), *kappa, yi.view()).map_err(&to_inner)?
            }
        }
        SurrogateKind::Composite { .. } => unreachable!("base() strips composites"),
    };
    check_shape("titan_block_step", yi.dim(), x_new.dim())?;
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            block: Some(i),
            detail: "block update produced a non-finite entry".into(),
        });
    }
    if !p.penalty(i, x_new.view()).is_feasible() {
        return Err(Error::InnerSolver {
            block: i,
            iteration,
            message: "step oracle returned an infeasible point".into(),
        });
    }
    let condition4 = match eta_prev {
        Some(e) => consts.gamma <= c * e,
        None => true,
    };
    let diag = StepDiagnostics {
        params: inertia.params,
        beta_bound: bound,
        lipschitz: prep.lipschitz,
        g_norm,
        eta_prev,
        condition4,
    };
    Ok((x_new, consts, diag))
}

/// Runs the solver from `x0` (with `x^{−1} = x0` unless given).
///
/// `ex` holds either one shared extrapolation config or one per block.
#[allow(clippy::too_many_arguments)]
pub fn titan_run<T: Real>(
    p: &dyn Problem<T>,
    cfgs: &[SurrogateConfig<T>],
    ex: &[ExtrapolationConfig],
    schedule: &Schedule,
    opts: &SolverOptions,
    x0: BlockVector<T>,
    x_minus1: Option<BlockVector<T>>,
) -> Result<(BlockVector<T>, RunLog)> {
    titan_run_observed(p, cfgs, ex, schedule, opts, x0, x_minus1, &mut |_, _| None)
}

/// [`titan_run`] with an observer called after every outer iteration (and
/// once at the start with iteration 0); its value is logged as the metric.
#[allow(clippy::too_many_arguments)]
pub fn titan_run_observed<T: Real>(
    p: &dyn Problem<T>,
    cfgs: &[SurrogateConfig<T>],
    ex: &[ExtrapolationConfig],
    schedule: &Schedule,
    opts: &SolverOptions,
    x0: BlockVector<T>,
    x_minus1: Option<BlockVector<T>>,
    observer: &mut dyn FnMut(usize, &BlockVector<T>) -> Option<f64>,
) -> Result<(BlockVector<T>, RunLog)> {
    let m = p.num_blocks();
    if x0.num_blocks() != m {
        return Err(Error::BlockCount {
            expected: m,
            found: x0.num_blocks(),
        });
    }
    for i in 0..m {
        check_shape("titan_run", p.block_shape(i), x0.block(i).dim())?;
    }
    if cfgs.len() != m {
        return Err(Error::Config(format!("{} surrogate configs for {m} blocks", cfgs.len())));
    }
    if ex.len() != 1 && ex.len() != m {
        return Err(Error::Config(format!("{} extrapolation configs for {m} blocks", ex.len())));
    }
    for e in ex {
        e.validate()?;
    }
    opts.validate()?;
    schedule.validate(m)?;
    let ex_of = |i: usize| if ex.len() == 1 { &ex[0] } else { &ex[i] };

    let start = Instant::now();
    let mut state = SolverState::new(x0, x_minus1)?;
    let mut f_cur = finite_objective(p, &state.x, 0, None)?;
    let initial_objective = f_cur.to_f64_lossy();
    let initial_metric = observer(0, &state.x);
    let order = schedule.sequence(m);
    let mut records = Vec::new();
    let mut evals = 1usize;

    if opts.max_iters == 0 {
        let log = RunLog {
            initial_objective,
            initial_metric,
            records,
            stop_reason: StopReason::MaxIters,
            objective_evals: evals,
        };
        return Ok((state.x, log));
    }

    let mut k = 0usize;
    let stop_reason = loop {
        k += 1;
        let monitored = opts.monitor.active(k);
        let snapshot = opts.restart.then(|| state.clone());
        let mut pass = run_pass(p, cfgs, &ex_of, &mut state, &order, k, f_cur, monitored, false)?;
        evals += pass.evals;
        let mut restarted = false;
        let mut rejected = false;
        if opts.restart && pass.objective >= f_cur && pass.inertial {
            let snapshot = snapshot.expect("snapshot taken when restart is enabled");
            state = snapshot.clone();
            pass = run_pass(p, cfgs, &ex_of, &mut state, &order, k, f_cur, monitored, true)?;
            evals += pass.evals;
            restarted = true;
            if pass.objective > f_cur {
                // Only rounding can make a plain majorization step increase F.
                state = snapshot;
                pass.objective = f_cur;
                rejected = true;
            }
        }
        f_cur = pass.objective;
        let metric = observer(k, &state.x);
        let max_g_norm = pass
            .updates
            .iter()
            .filter_map(|u| u.g_norm)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        let rel = if rejected {
            0.0
        } else {
            pass.updates.iter().map(|u| u.relative_change).fold(0.0, f64::max)
        };
        records.push(IterationRecord {
            iteration: k,
            objective: f_cur.to_f64_lossy(),
            metric,
            updates: pass.updates,
            restarted,
            rejected,
            elapsed_s: start.elapsed().as_secs_f64(),
            max_g_norm,
        });
        if let Some(tol) = opts.stop_tolerance {
            if rel < tol {
                break StopReason::Tolerance;
            }
        }
        if k >= opts.max_iters {
            break StopReason::MaxIters;
        }
        if let Some(budget) = opts.time_budget_seconds {
            if start.elapsed().as_secs_f64() >= budget {
                break StopReason::TimeBudget;
            }
        }
    };
    let log = RunLog {
        initial_objective,
        initial_metric,
        records,
        stop_reason,
        objective_evals: evals,
    };
    Ok((state.x, log))
}

struct Pass<T> {
    updates: Vec<BlockUpdate>,
    objective: T,
    inertial: bool,
    evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_pass<'a, T: Real>(
    p: &dyn Problem<T>,
    cfgs: &[SurrogateConfig<T>],
    ex_of: &dyn Fn(usize) -> &'a ExtrapolationConfig,
    state: &mut SolverState<T>,
    order: &[usize],
    k: usize,
    f_start: T,
    monitored: bool,
    no_inertia: bool,
) -> Result<Pass<T>> {
    let mut updates = Vec::with_capacity(order.len());
    let mut f_before = f_start;
    let mut evals = 0;
    let mut inertial = false;
    for &i in order {
        let ctx = StepContext {
            iteration: k,
            no_inertia,
            want_g: monitored,
        };
        let (x_new, consts, diag) = titan_block_step(p, &cfgs[i], ex_of(i), state, i, ctx)?;
        let yi = state.x.block(i);
        let step_sq = dist_sq(x_new.view(), yi.view());
        let prev_sq = dist_sq(yi.view(), state.prev[i].view());
        let rel = step_sq.sqrt() / (T::one() + frob_sq(&x_new).sqrt());
        inertial |= consts.a > T::zero() || diag.params.beta > T::zero() || diag.params.tau > T::zero();
        let old = std::mem::replace(&mut state.prev[i], yi.clone());
        drop(old);
        state.x.set_block(i, x_new)?;
        state.eta_prev[i] = Some(consts.eta);
        state.mu[i].advance();

        let (fb, fa, resid) = if monitored {
            let f_after = finite_objective(p, &state.x, k, Some(i))?;
            evals += 1;
            let r = nsdp_check(f_before, f_after, consts.gamma, consts.eta, prev_sq, step_sq);
            let out = (Some(f_before.to_f64_lossy()), Some(f_after.to_f64_lossy()), Some(r.to_f64_lossy()));
            f_before = f_after;
            out
        } else {
            (None, None, None)
        };
        updates.push(BlockUpdate {
            block: i,
            step_norm_sq: step_sq.to_f64_lossy(),
            prev_step_norm_sq: prev_sq.to_f64_lossy(),
            beta: diag.params.beta.to_f64_lossy(),
            tau: diag.params.tau.to_f64_lossy(),
            alpha: diag.params.alpha.to_f64_lossy(),
            a: consts.a.to_f64_lossy(),
            rho: consts.rho.to_f64_lossy(),
            gamma: consts.gamma.to_f64_lossy(),
            eta: consts.eta.to_f64_lossy(),
            eta_prev: diag.eta_prev.map(|e| e.to_f64_lossy()),
            eta_restart_alt: no_inertia.then(|| 0.5 * consts.rho.to_f64_lossy()),
            lipschitz: diag.lipschitz.to_f64_lossy(),
            beta_bound: diag.beta_bound.to_f64_lossy(),
            g_norm: diag.g_norm.map(|g| g.to_f64_lossy()),
            f_before: fb,
            f_after: fa,
            nsdp_residual: resid,
            condition4: diag.condition4,
            relative_change: rel.to_f64_lossy(),
        });
    }
    let objective = if monitored {
        f_before
    } else {
        evals += 1;
        finite_objective(p, &state.x, k, None)?
    };
    Ok(Pass {
        updates,
        objective,
        inertial,
        evals,
    })
}
