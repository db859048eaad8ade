//! Self-check suite behind the `check` subcommand: majorization sampling,
//! decrease-inequality audits, scalar oracles, gradient checks and the
//! proximal-gradient equivalence.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::apps::mcp::{mcp_initial_point, McpInstance, McpProblem, McpRunOptions, McpVariant};
use crate::apps::nmf::{sparse_nmf_run, NmfRunOptions, NmfVariant, SparseNmfProblem};
use crate::apps::synth::{synthesize_mcp, synthesize_nmf, McpSynthSpec, NmfSynthSpec};
use crate::block::{BlockVector, CompositeStructure};
use crate::error::Result;
use crate::extrapolation::DEFAULT_C;
use crate::numerics::{
    default_fd_step, grad_check, prox_exponential, prox_exponential_objective, soft_threshold, soft_threshold_weighted,
    spectral_norm_gram, GramSide, PowerIterOptions,
};
use crate::solver::{finite_length_bound, telescoping_check, MonitorLevel, SolverOptions};
use crate::surrogate::{
    check_majorization, ConvexityMode, Modulus, QuadraticForm, QuadraticKernel, SurrogateConfig, SurrogateKind,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

pub type Check = fn() -> Result<CheckResult>;

/// Every check, in the order `check` runs them.
pub const CHECKS: [(&str, Check); 8] = [
    ("majorization", check_majorization_families),
    ("nsdp", check_nsdp),
    ("telescoping", check_telescoping),
    ("soft_threshold", check_soft_threshold),
    ("prox_exponential", check_prox_exponential),
    ("closed_form", check_closed_form),
    ("gradients", check_gradients),
    ("palm_equivalence", check_palm_equivalence),
];

pub fn run_checks() -> Result<Vec<CheckResult>> {
    CHECKS.iter().map(|(_, f)| f()).collect()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn nmf_anchor(seed: u64) -> Result<(SparseNmfProblem<f64>, BlockVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Array2::from_shape_simple_fn((30, 20), || rng.random::<f64>());
    let p = SparseNmfProblem::new(m, 4, 2)?;
    let u = Array2::from_shape_simple_fn((30, 4), || rng.random::<f64>());
    let v = Array2::from_shape_simple_fn((4, 20), || rng.random::<f64>());
    Ok((p, BlockVector::new(vec![u, v])?))
}

fn mcp_anchor(seed: u64) -> Result<(McpProblem<f64>, BlockVector<f64>)> {
    let spec = McpSynthSpec {
        rows: 30,
        cols: 20,
        rank: 3,
        noise: 0.1,
        density: 0.5,
        train_fraction: 0.7,
    };
    let inst = synthesize_mcp::<f64>(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let y = BlockVector::new(vec![gaussian(30, 3, &mut rng), gaussian(3, 20, &mut rng)])?;
    Ok((McpProblem::new(inst.observed, 3, 0.1, 5.0), y))
}

/// The five surrogate families on the factorization and completion losses.
pub fn majorization_configs(
    y: &BlockVector<f64>,
    nmf: &SparseNmfProblem<f64>,
) -> Result<Vec<(&'static str, SurrogateConfig<f64>)>> {
    let v = y.block(1);
    let vvt = v.dot(&v.t());
    let l = nmf.lipschitz(0, y);
    let mode = ConvexityMode::General;
    let shifted = &vvt + &Array2::<f64>::eye(vvt.nrows()).mapv(|d| 1e-3 * d);
    Ok(vec![
        ("proximal", SurrogateConfig::new(SurrogateKind::Proximal { rho: Modulus::Fixed(1.0) }, mode)?),
        (
            "lipschitz",
            SurrogateConfig::new(
                SurrogateKind::Lipschitz {
                    kappa: 1.0,
                    lipschitz: Modulus::Fixed(l),
                },
                mode,
            )?,
        ),
        (
            "bregman",
            SurrogateConfig::new(
                SurrogateKind::Bregman {
                    kappa: 1.0,
                    kernel: Arc::new(QuadraticKernel::new(QuadraticForm::Right(vvt))?),
                    relative_l: Modulus::Fixed(1.0),
                },
                mode,
            )?,
        ),
        (
            "quadratic",
            SurrogateConfig::new(
                SurrogateKind::Quadratic {
                    kappa: 1.0,
                    hessian: Arc::new(move |_, _| Ok(QuadraticForm::Right(shifted.clone()))),
                },
                mode,
            )?,
        ),
    ])
}

pub fn check_majorization_families() -> Result<CheckResult> {
    let (nmf, y) = nmf_anchor(11)?;
    let mut worst = Vec::new();
    let mut passed = true;
    for (name, cfg) in majorization_configs(&y, &nmf)? {
        let r = check_majorization(&cfg, 0, &nmf, &y, 1000, 0.5, 3)?;
        passed &= r.violations == 0 && r.max_gap_at_anchor <= 1e-10 * (1.0 + r.f_at_anchor.abs());
        worst.push(format!("{name}: {} violations, min gap {:.3e}", r.violations, r.min_gap));
    }
    let (mcp, y) = mcp_anchor(5)?;
    let mcp = Arc::new(mcp);
    let lip = Arc::clone(&mcp);
    let cfg = SurrogateConfig::new(
        SurrogateKind::Composite {
            inner: Box::new(SurrogateKind::lipschitz(1.0, move |i, y| lip.lipschitz(i, y))),
        },
        ConvexityMode::FullyConvex,
    )?;
    for i in 0..2 {
        let r = check_majorization(&cfg, i, mcp.as_ref(), &y, 1000, 0.5, 4)?;
        passed &= r.violations == 0 && r.max_gap_at_anchor <= 1e-10 * (1.0 + r.f_at_anchor.abs());
        worst.push(format!("composite[{i}]: {} violations, min gap {:.3e}", r.violations, r.min_gap));
    }
    Ok(CheckResult::new("majorization", passed, worst.join("; ")))
}

fn small_nmf_options(iters: usize, repeats: Option<(usize, usize)>) -> NmfRunOptions {
    NmfRunOptions {
        variant: NmfVariant::Titan,
        repeats,
        solver: SolverOptions {
            max_iters: iters,
            stop_tolerance: None,
            monitor: MonitorLevel::Full,
            ..SolverOptions::default()
        },
        extrapolation: None,
    }
}

fn small_nmf() -> Result<crate::apps::nmf::SparseNmfInstance<f64>> {
    let spec = NmfSynthSpec {
        rows: 40,
        cols: 30,
        rank: 4,
        sparsity: None,
        noise: 0.01,
    };
    Ok(synthesize_nmf::<f64>(&spec, 7)?.0)
}

pub fn check_nsdp() -> Result<CheckResult> {
    let inst = small_nmf()?;
    let res = sparse_nmf_run(&inst, &small_nmf_options(100, None), 1)?;
    let mut worst = f64::INFINITY;
    let mut cond4 = true;
    for rec in &res.log.records {
        for u in &rec.updates {
            if let Some(r) = u.nsdp_residual {
                worst = worst.min(r / (1.0 + rec.objective.abs()));
            }
            cond4 &= u.condition4;
        }
    }
    Ok(CheckResult::new(
        "nsdp",
        worst >= -1e-8 && cond4,
        format!("worst normalized residual {worst:.3e}, condition on γ ≤ Cη {}", if cond4 { "held" } else { "violated" }),
    ))
}

pub fn check_telescoping() -> Result<CheckResult> {
    let inst = small_nmf()?;
    let res = sparse_nmf_run(&inst, &small_nmf_options(100, None), 1)?;
    let mut ok = true;
    for k in 0..=res.log.records.len() {
        ok &= telescoping_check(&res.log, DEFAULT_C, k)?;
    }
    let rep = sparse_nmf_run(&inst, &small_nmf_options(40, Some((5, 5))), 1)?;
    let (total, bound) = finite_length_bound(&rep.log, DEFAULT_C, 0.0)?;
    Ok(CheckResult::new(
        "telescoping",
        ok && total <= bound,
        format!("cyclic sums {}, repeated-block length {total:.3e} ≤ {bound:.3e}", if ok { "held" } else { "failed" }),
    ))
}

/// Minimizer of a convex scalar function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi, 0.0].into_iter().filter(|x| (lo..=hi).contains(x)).fold(mid, |best, x| if f(x) < f(best) { x } else { best })
}

/// Minimizer of `f` over `[lo, hi]` by nested grids of `points` points, each
/// one zooming onto two cells around the previous best.
pub fn grid_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, levels: usize) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut best = lo;
    for _ in 0..levels {
        let h = (hi - lo) / (points - 1) as f64;
        let mut fbest = f64::INFINITY;
        for k in 0..points {
            let x = lo + h * k as f64;
            let fx = f(x);
            if fx < fbest {
                fbest = fx;
                best = x;
            }
        }
        lo = best - h;
        hi = best + h;
    }
    best
}

pub fn check_soft_threshold() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p: f64 = rng.random_range(-5.0..5.0);
        let t: f64 = rng.random_range(0.0..3.0);
        let f = |x: f64| 0.5 * (x - p) * (x - p) + t * x.abs();
        let oracle = grid_minimize(f, -6.0, 6.0, 2001, 4);
        worst = worst.max((soft_threshold(p, t) - oracle).abs());
    }
    Ok(CheckResult::new(
        "soft_threshold",
        worst <= 1e-6,
        format!("max argument error {worst:.3e}"),
    ))
}

pub fn check_prox_exponential() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let v: f64 = rng.random_range(-3.0..3.0);
        let gamma: f64 = rng.random_range(0.0..2.0);
        let theta: f64 = rng.random_range(0.1..10.0);
        let x = prox_exponential(v, gamma, theta);
        let fx = prox_exponential_objective(x, v, gamma, theta);
        let span = v.abs() + 1.0;
        let n = 100_000;
        let best = (0..=n)
            .map(|k| -span + 2.0 * span * k as f64 / n as f64)
            .chain([0.0])
            .map(|g| prox_exponential_objective(g, v, gamma, theta))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(fx - best);
    }
    Ok(CheckResult::new(
        "prox_exponential",
        worst <= 1e-8,
        format!("largest excess over the grid {worst:.3e}"),
    ))
}

pub fn check_closed_form() -> Result<CheckResult> {
    let (mcp, y) = mcp_anchor(8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let c = gaussian(30, 3, &mut rng);
        let z = gaussian(30, 3, &mut rng);
        let w = mcp.reg_weights(y.block(0).view());
        let lam: f64 = rng.random_range(0.5..5.0);
        let x = mcp.linearized_step(0, w.view(), c.view(), lam, z.view())?;
        for ((idx, &xv), &cv) in x.indexed_iter().zip(c.iter()) {
            let (zv, wv) = (z[idx], w[idx]);
            let q = |t: f64| cv * t + 0.5 * lam * (t - zv) * (t - zv) + wv * t.abs();
            let reach = zv.abs() + (cv.abs() + wv) / lam + 1.0;
            let oracle = golden_section(q, -reach, reach);
            worst = worst.max(q(xv) - q(oracle));
        }
    }
    Ok(CheckResult::new(
        "closed_form",
        worst <= 1e-9,
        format!("largest objective gap {worst:.3e}"),
    ))
}

pub fn check_gradients() -> Result<CheckResult> {
    let (mcp, y) = mcp_anchor(9)?;
    let (u, v) = (y.block(0), y.block(1));
    let gu = mcp.psi_gradient(0, u.view(), v.view());
    let gv = mcp.psi_gradient(1, u.view(), v.view());
    let eu = grad_check(|x| mcp.psi(x, v.view()), gu.view(), u.view(), default_fd_step(u.view()))?;
    let ev = grad_check(|x| mcp.psi(u.view(), x), gv.view(), v.view(), default_fd_step(v.view()))?;
    let (nmf, y) = nmf_anchor(12)?;
    let mut en: f64 = 0.0;
    for i in 0..2 {
        let g = crate::block::Problem::block_gradient(&nmf, i, &y)?;
        let e = grad_check(
            |x| crate::block::Problem::smooth_value(&nmf, &y.with_block(i, x).expect("shape")).expect("value"),
            g.view(),
            y.block(i).view(),
            default_fd_step(y.block(i).view()),
        )?;
        en = en.max(e);
    }
    let worst = eu.max(ev).max(en);
    Ok(CheckResult::new(
        "gradients",
        worst <= 1e-6,
        format!("completion U {eu:.2e}, V {ev:.2e}; factorization {en:.2e}"),
    ))
}

/// Plain proximal-gradient block descent on the completion objective, with
/// the regularizer either linearized (soft thresholding) or kept whole
/// (exponential prox).
pub fn reference_bcd(mcp: &McpProblem<f64>, x0: &BlockVector<f64>, iters: usize, linearized: bool) -> Result<BlockVector<f64>> {
    let (lambda, theta) = (0.1, 5.0);
    let opts = PowerIterOptions::default();
    let mut u = x0.block(0).clone();
    let mut v = x0.block(1).clone();
    for _ in 0..iters {
        for i in 0..2 {
            let (own, l) = if i == 0 {
                (&u, spectral_norm_gram(v.view(), GramSide::Left, &opts)?)
            } else {
                (&v, spectral_norm_gram(u.view(), GramSide::Right, &opts)?)
            };
            let g = mcp.psi_gradient(i, u.view(), v.view());
            let z = own - &g.mapv(|e| e / l);
            let next = if linearized {
                let w = own.mapv(|e| lambda * theta * (-theta * e.abs()).exp());
                soft_threshold_weighted(z.view(), w.view(), 1.0 / l)?
            } else {
                z.mapv(|e| prox_exponential(e, lambda / l, theta))
            };
            if i == 0 {
                u = next;
            } else {
                v = next;
            }
        }
    }
    BlockVector::new(vec![u, v])
}

pub fn check_palm_equivalence() -> Result<CheckResult> {
    let spec = McpSynthSpec {
        rows: 25,
        cols: 20,
        rank: 3,
        noise: 0.05,
        density: 0.5,
        train_fraction: 0.7,
    };
    let base = synthesize_mcp::<f64>(&spec, 31)?;
    let x0 = mcp_initial_point(&base.observed, 3, 31)?;
    let mcp = McpProblem::new(base.observed.clone(), 3, 0.1, 5.0);
    let iters = 30;
    let mut worst: f64 = 0.0;
    for (variant, linearized) in [(McpVariant::TitanNo, true), (McpVariant::Palm, false)] {
        let inst = McpInstance {
            variant,
            ..base.clone()
        };
        let opts = McpRunOptions {
            solver: SolverOptions {
                max_iters: iters,
                stop_tolerance: None,
                monitor: MonitorLevel::Off,
                ..SolverOptions::default()
            },
            rmse_every: iters,
            extrapolation: None,
        };
        let got = crate::apps::mcp::mcp_run_from(&inst, &opts, x0.clone())?;
        let want = reference_bcd(&mcp, &x0, iters, linearized)?;
        let du = (&got.u - want.block(0)).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let dv = (&got.v - want.block(1)).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        worst = worst.max(du).max(dv);
    }
    Ok(CheckResult::new(
        "palm_equivalence",
        worst <= 1e-12,
        format!("max iterate difference {worst:.3e}"),
    ))
}
