//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. The two dataset reproductions run only when
//! `TITAN_MOVIELENS_1M` (path to `ratings.dat`) or `TITAN_CBCL` (path to the
//! dense face matrix, `.csv` or `.mtx`) is set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use titan_core::apps::{
    mcp_initial_point, mcp_run, mcp_run_from, mcp_surrogates, sparse_nmf_run, synthesize_mcp, synthesize_nmf, McpInstance,
    McpProblem, McpRunOptions, McpSynthSpec, McpVariant, NmfRunOptions, NmfSynthSpec, NmfVariant, SparseNmfProblem,
};
use titan_core::experiment::{run_all, worker_count, Algorithm, DataFormat, DataSource, ExperimentConfig};
use titan_core::extrapolation::{BetaRule, ExtrapolationConfig, DEFAULT_C};
use titan_core::numerics::{
    default_fd_step, grad_check, prox_exponential, prox_exponential_objective, soft_threshold_weighted,
    spectral_norm_gram, GramSide, PowerIterOptions,
};
use titan_core::solver::{titan_block_step, MonitorLevel, RunLog, SolverOptions, SolverState, StepContext};
use titan_core::surrogate::{
    check_majorization, ConvexityMode, Modulus, QuadraticForm, QuadraticKernel, SurrogateConfig, SurrogateKind,
};
use titan_core::{BlockVector, ObservationMask};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
}

fn nmf_families(y: &BlockVector<f64>, p: &SparseNmfProblem<f64>, i: usize) -> Vec<(&'static str, SurrogateConfig<f64>)> {
    let gram = if i == 0 {
        let v = y.block(1);
        QuadraticForm::Right(v.dot(&v.t()))
    } else {
        let u = y.block(0);
        QuadraticForm::Left(u.t().dot(u))
    };
    let shifted = match &gram {
        QuadraticForm::Right(g) => QuadraticForm::Right(g + &Array2::<f64>::eye(g.nrows()).mapv(|d| 1e-2 * d)),
        QuadraticForm::Left(g) => QuadraticForm::Left(g + &Array2::<f64>::eye(g.nrows()).mapv(|d| 1e-2 * d)),
        _ => unreachable!(),
    };
    let l = common::gram_norm(if i == 0 { y.block(1).view() } else { y.block(0).t() });
    assert!((l - p.lipschitz(i, y)).abs() <= 1e-6 * l);
    let mode = ConvexityMode::General;
    vec![
        ("proximal", SurrogateConfig::new(SurrogateKind::Proximal { rho: Modulus::Fixed(0.5) }, mode).unwrap()),
        (
            "lipschitz",
            SurrogateConfig::new(
                SurrogateKind::Lipschitz {
                    kappa: 1.0,
                    lipschitz: Modulus::Fixed(l),
                },
                mode,
            )
            .unwrap(),
        ),
        (
            "bregman",
            SurrogateConfig::new(
                SurrogateKind::Bregman {
                    kappa: 1.0,
                    kernel: Arc::new(QuadraticKernel::new(gram).unwrap()),
                    relative_l: Modulus::Fixed(1.0),
                },
                mode,
            )
            .unwrap(),
        ),
        (
            "quadratic",
            SurrogateConfig::new(
                SurrogateKind::Quadratic {
                    kappa: 1.0,
                    hessian: Arc::new(move |_, _| Ok(shifted.clone())),
                },
                mode,
            )
            .unwrap(),
        ),
    ]
}

fn criterion_1() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, r: titan_core::surrogate::MajorizationReport| {
        let pass = r.violations == 0 && r.max_gap_at_anchor <= 1e-10 * (1.0 + r.f_at_anchor.abs());
        ok &= pass;
        if !pass {
            lines.push(format!("{name}: {} violations, anchor gap {:.2e}", r.violations, r.max_gap_at_anchor));
        }
    };
    let mut checked = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SparseNmfProblem::new(uniform(100, 80, &mut rng), 5, 2).unwrap();
        let y = BlockVector::new(vec![uniform(100, 5, &mut rng), uniform(5, 80, &mut rng)]).unwrap();
        for i in 0..2 {
            for (name, cfg) in nmf_families(&y, &p, i) {
                record(name, check_majorization(&cfg, i, &p, &y, 1000, 1.0, seed * 10 + i as u64).unwrap());
                checked += 1;
            }
        }
        let spec = McpSynthSpec {
            rows: 100,
            cols: 80,
            rank: 5,
            noise: 0.1,
            density: 0.3,
            train_fraction: 0.7,
        };
        let inst = synthesize_mcp::<f64>(&spec, seed).unwrap();
        let mcp = Arc::new(McpProblem::new(inst.observed, 5, 0.1, 5.0));
        let y = BlockVector::new(vec![gaussian(100, 5, &mut rng), gaussian(5, 80, &mut rng)]).unwrap();
        let cfgs = mcp_surrogates(&mcp, McpVariant::TitanExtra).unwrap();
        for (i, cfg) in cfgs.iter().enumerate() {
            record("composite", check_majorization(cfg, i, mcp.as_ref(), &y, 1000, 1.0, seed * 10 + 5).unwrap());
            checked += 1;
        }
    }
    ensure(ok, format!("{checked} family/block/instance checks of 1000 samples; {}", lines.join("; ")))
}

fn desk_nmf() -> titan_core::apps::SparseNmfInstance<f64> {
    let spec = NmfSynthSpec {
        rows: 100,
        cols: 80,
        rank: 5,
        sparsity: None,
        noise: 0.0,
    };
    synthesize_nmf::<f64>(&spec, 42).unwrap().0
}

fn full_monitor(iters: usize) -> SolverOptions {
    SolverOptions {
        max_iters: iters,
        stop_tolerance: None,
        monitor: MonitorLevel::Full,
        ..SolverOptions::default()
    }
}

fn desk_run(repeats: Option<(usize, usize)>) -> RunLog {
    let opts = NmfRunOptions {
        variant: NmfVariant::Titan,
        repeats,
        solver: full_monitor(200),
        extrapolation: None,
    };
    sparse_nmf_run(&desk_nmf(), &opts, 1).unwrap().log
}

fn criterion_2() -> Outcome {
    let log = desk_run(None);
    let mut worst = f64::INFINITY;
    let mut cond4_failures = 0;
    let mut steps = 0;
    for rec in &log.records {
        for u in &rec.updates {
            let (fb, fa) = (u.f_before.unwrap(), u.f_after.unwrap());
            let residual = fb + 0.5 * u.gamma * u.prev_step_norm_sq - fa - 0.5 * u.eta * u.step_norm_sq;
            worst = worst.min(residual / (1.0 + fa.abs()));
            if let Some(eta_prev) = u.eta_prev {
                if !(u.gamma <= DEFAULT_C * eta_prev) {
                    cond4_failures += 1;
                }
            }
            steps += 1;
        }
    }
    ensure(
        log.records.len() == 200 && worst >= -1e-8 && cond4_failures == 0,
        format!("{steps} block steps, worst normalized residual {worst:.3e}, {cond4_failures} γ > Cη_prev"),
    )
}

fn criterion_3() -> Outcome {
    let log = desk_run(None);
    let sums = common::telescoped(&log, DEFAULT_C);
    let bad = sums.iter().filter(|(l, r)| *l > r + 1e-8 * (1.0 + r.abs())).count();
    let repeated = desk_run(Some((5, 5)));
    let (_, rhs) = *common::telescoped(&repeated, DEFAULT_C).last().unwrap();
    let total: f64 = repeated.records.iter().flat_map(|r| &r.updates).map(|u| u.step_norm_sq).sum();
    let l_low = repeated
        .records
        .iter()
        .flat_map(|r| &r.updates)
        .map(|u| 0.5 * u.eta)
        .fold(f64::INFINITY, f64::min);
    let bound = rhs / ((1.0 - DEFAULT_C) * l_low);
    ensure(
        sums.len() == 200 && bad == 0 && total <= bound,
        format!("{bad} of {} prefixes violate; window-10 length {total:.3e} ≤ {bound:.3e}", sums.len()),
    )
}

fn criterion_4() -> Outcome {
    let aggressive = ExtrapolationConfig {
        beta: BetaRule::Constant { value: 10.0 },
        bound_scale: 2.0,
        ..ExtrapolationConfig::default()
    };
    let opts = NmfRunOptions {
        extrapolation: Some(vec![aggressive; 2]),
        solver: SolverOptions {
            max_iters: 500,
            stop_tolerance: None,
            monitor: MonitorLevel::Off,
            restart: true,
            ..SolverOptions::default()
        },
        ..NmfRunOptions::default()
    };
    let log = sparse_nmf_run(&desk_nmf(), &opts, 1).unwrap().log;
    let mut f = vec![log.initial_objective];
    f.extend(log.objectives());
    let increases = f.windows(2).filter(|w| w[1] > w[0]).count();
    let restarts = log.records.iter().filter(|r| r.restarted).count();
    ensure(
        log.records.len() == 500 && increases == 0 && restarts >= 1,
        format!("{increases} increases over {} iterations, {restarts} restarts", log.records.len()),
    )
}

fn criterion_5() -> Outcome {
    let spec = McpSynthSpec {
        rows: 50,
        cols: 40,
        rank: 4,
        noise: 0.1,
        density: 0.4,
        train_fraction: 0.7,
    };
    let base = synthesize_mcp::<f64>(&spec, 5).unwrap();
    let x0 = mcp_initial_point(&base.observed, 4, 5).unwrap();
    let (lambda, theta) = (base.lambda, base.theta);
    let power = PowerIterOptions::default();
    let mut worst: f64 = 0.0;
    for variant in [McpVariant::TitanNo, McpVariant::Palm] {
        let inst = McpInstance {
            variant,
            ..base.clone()
        };
        let opts = McpRunOptions {
            solver: SolverOptions {
                max_iters: 1,
                stop_tolerance: None,
                monitor: MonitorLevel::Off,
                ..SolverOptions::default()
            },
            rmse_every: 1,
            extrapolation: None,
        };
        let mut x = x0.clone();
        let (mut u, mut v) = (x0.block(0).clone(), x0.block(1).clone());
        for _ in 0..100 {
            let got = mcp_run_from(&inst, &opts, x).unwrap();
            for i in 0..2 {
                let l = if i == 0 {
                    spectral_norm_gram(v.view(), GramSide::Left, &power).unwrap()
                } else {
                    spectral_norm_gram(u.view(), GramSide::Right, &power).unwrap()
                };
                let g = common::masked_gradient_block(&inst.observed, i, &u, &v);
                let own = if i == 0 { &u } else { &v };
                let next = Array2::from_shape_fn(own.dim(), |idx| {
                    let z = own[idx] - g[idx] / l;
                    match variant {
                        McpVariant::Palm => prox_exponential(z, lambda / l, theta),
                        _ => common::soft(z, lambda * theta * (-theta * own[idx].abs()).exp() / l),
                    }
                });
                if i == 0 {
                    u = next;
                } else {
                    v = next;
                }
            }
            let du = (&got.u - &u).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let dv = (&got.v - &v).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            worst = worst.max(du).max(dv);
            x = BlockVector::new(vec![got.u, got.v]).unwrap();
        }
    }
    ensure(worst <= 1e-12, format!("max iterate deviation over 100 iterations {worst:.3e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gap = f64::NEG_INFINITY;
    for k in 0..100u64 {
        let a = gaussian(6, 5, &mut rng);
        let triplets: Vec<(usize, usize, f64)> = a
            .indexed_iter()
            .filter(|_| rng.random::<f64>() < 0.7)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        let mask = ObservationMask::from_triplets(6, 5, &triplets).unwrap();
        let (lambda, theta) = (0.1 + rng.random::<f64>(), 1.0 + 9.0 * rng.random::<f64>());
        let problem = McpProblem::new(mask.clone(), 4, lambda, theta);
        let u = gaussian(6, 4, &mut rng);
        let v = gaussian(4, 5, &mut rng);
        let state = SolverState::new(BlockVector::new(vec![u.clone(), v.clone()]).unwrap(), None).unwrap();
        let problem = Arc::new(problem);
        let cfgs = mcp_surrogates(&problem, McpVariant::TitanNo).unwrap();
        let (x, _, _) = titan_block_step(
            problem.as_ref(),
            &cfgs[0],
            &ExtrapolationConfig::none(),
            &state,
            0,
            StepContext {
                iteration: k as usize,
                ..StepContext::default()
            },
        )
        .unwrap();
        let l = common::gram_norm(v.view());
        let (g, _) = common::masked_gradients(&mask, u.view(), v.view());
        for (idx, &xv) in x.indexed_iter() {
            let w = lambda * theta * (-theta * u[idx].abs()).exp();
            let q = |t: f64| g[idx] * t + 0.5 * l * (t - u[idx]).powi(2) + w * t.abs();
            let reach = u[idx].abs() + (g[idx].abs() + w) / l + 1.0;
            let oracle = common::golden(&q, -reach, reach);
            worst_gap = worst_gap.max(q(xv) - q(oracle));
        }
    }
    let mut worst_arg: f64 = 0.0;
    for _ in 0..1000 {
        let p: f64 = rng.random_range(-4.0..4.0);
        let w: f64 = rng.random_range(0.0..2.0);
        let tau: f64 = rng.random_range(0.1..2.0);
        let got = soft_threshold_weighted(
            Array2::from_elem((1, 1), p).view(),
            Array2::from_elem((1, 1), w).view(),
            tau,
        )
        .unwrap()[[0, 0]];
        let f = |x: f64| 0.5 * (x - p) * (x - p) + tau * w * x.abs();
        let oracle = common::refined_grid_argmin(&f, -5.0, 5.0, 2001);
        worst_arg = worst_arg.max((got - oracle).abs());
    }
    ensure(
        worst_gap <= 1e-9 && worst_arg <= 1e-6,
        format!("U-step objective gap {worst_gap:.3e}; soft-threshold argument error {worst_arg:.3e}"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let v: f64 = rng.random_range(-5.0..5.0);
        let gamma: f64 = rng.random_range(0.0..3.0);
        let theta: f64 = rng.random_range(0.1..20.0);
        let x = prox_exponential(v, gamma, theta);
        let q = |t: f64| prox_exponential_objective(t, v, gamma, theta);
        let span = v.abs() + 1.0;
        let (_, grid_best) = common::grid_argmin(&q, -span, span, 1_000_000);
        worst = worst.max(q(x) - grid_best.min(q(0.0)));
    }
    ensure(worst <= 1e-8, format!("largest excess over the 10⁶-point grid {worst:.3e}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let power = PowerIterOptions::default();
    let mut worst_norm: f64 = 0.0;
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let b = gaussian(r, c, &mut rng);
        let want = common::gram_norm(b.view());
        let left = spectral_norm_gram(b.view(), GramSide::Left, &power).unwrap();
        let right = spectral_norm_gram(b.t(), GramSide::Right, &power).unwrap();
        worst_norm = worst_norm.max((left - want).abs() / want).max((right - want).abs() / want);
    }
    let spec = McpSynthSpec {
        rows: 40,
        cols: 30,
        rank: 4,
        noise: 0.1,
        density: 0.5,
        train_fraction: 0.7,
    };
    let inst = synthesize_mcp::<f64>(&spec, 8).unwrap();
    let mcp = McpProblem::new(inst.observed.clone(), 4, 0.1, 5.0);
    let u = gaussian(40, 4, &mut rng);
    let v = gaussian(4, 30, &mut rng);
    let gu = mcp.psi_gradient(0, u.view(), v.view());
    let gv = mcp.psi_gradient(1, u.view(), v.view());
    let eu = grad_check(|x| common::masked_loss(&inst.observed, x, v.view()), gu.view(), u.view(), default_fd_step(u.view())).unwrap();
    let ev = grad_check(|x| common::masked_loss(&inst.observed, u.view(), x), gv.view(), v.view(), default_fd_step(v.view())).unwrap();
    let (ou, ov) = common::masked_gradients(&inst.observed, u.view(), v.view());
    let dense = (&gu - &ou)
        .iter()
        .chain((&gv - &ov).iter())
        .fold(0.0f64, |m, d| m.max(d.abs()));
    ensure(
        worst_norm <= 1e-6 && eu <= 1e-6 && ev <= 1e-6 && dense <= 1e-10,
        format!("spectral norm rel error {worst_norm:.2e}; grad check U {eu:.2e}, V {ev:.2e}; dense gradient diff {dense:.2e}"),
    )
}

fn criterion_9() -> Outcome {
    let spec = McpSynthSpec {
        rows: 500,
        cols: 300,
        rank: 8,
        noise: 0.0,
        density: 0.3,
        train_fraction: 0.7,
    };
    let opts = McpRunOptions {
        solver: SolverOptions {
            max_iters: 100,
            stop_tolerance: None,
            monitor: MonitorLevel::Off,
            ..SolverOptions::default()
        },
        rmse_every: 100,
        extrapolation: None,
    };
    let (mut below, mut fast) = (0, 0);
    let mut reach = Vec::new();
    for seed in 0..10u64 {
        let inst = synthesize_mcp::<f64>(&spec, seed).unwrap();
        let extra = mcp_run(&inst.clone().with_variant(McpVariant::TitanExtra), &opts, seed).unwrap().log;
        let no = mcp_run(&inst.with_variant(McpVariant::TitanNo), &opts, seed).unwrap().log;
        let target = no.records[99].objective;
        if extra.records[99].objective <= target {
            below += 1;
        }
        let hit = extra.records.iter().position(|r| r.objective <= target).map(|k| k + 1);
        if hit.is_some_and(|k| k <= 50) {
            fast += 1;
        }
        reach.push(hit.map_or("-".into(), |k| k.to_string()));
    }
    ensure(
        below >= 8 && fast >= 8,
        format!("lower after 100 in {below}/10, reached within 50 in {fast}/10 (iterations: {})", reach.join(" ")),
    )
}

fn dataset_run(preset: &str, path: PathBuf, format: DataFormat, variants: Vec<Algorithm>) -> Vec<(Algorithm, f64)> {
    let mut cfg = ExperimentConfig::from_json(preset).unwrap();
    cfg.data = DataSource::File { path, format };
    cfg.variants = variants.clone();
    let outcomes = run_all(&cfg, worker_count().unwrap()).unwrap();
    variants
        .into_iter()
        .map(|v| {
            let xs: Vec<f64> = outcomes.iter().filter(|o| o.variant == v).map(|o| o.final_metric).collect();
            (v, xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect()
}

fn criterion_10(path: PathBuf) -> Outcome {
    let means = dataset_run(
        titan_core::experiment::PRESET_MOVIELENS_1M,
        path,
        DataFormat::DoubleColon,
        vec![Algorithm::TitanExtra, Algorithm::TitanNo],
    );
    let (extra, no) = (means[0].1, means[1].1);
    ensure(
        (extra - 0.7509).abs() <= 0.01 && (no - 0.7514).abs() <= 0.01,
        format!("mean test RMSE extra {extra:.4}, no {no:.4}"),
    )
}

fn criterion_11(path: PathBuf) -> Outcome {
    let format = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        DataFormat::MatrixMarket
    } else {
        DataFormat::Csv
    };
    let means = dataset_run(titan_core::experiment::PRESET_CBCL, path, format, vec![Algorithm::Titan]);
    let err = means[0].1;
    ensure((err - 0.11939).abs() <= 0.003, format!("mean relative error {err:.5}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n}: PASS ({secs:.1} s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.1} s) {d}");
            }
        }
    };
    report(1, &criterion_1);
    report(2, &criterion_2);
    report(3, &criterion_3);
    report(4, &criterion_4);
    report(5, &criterion_5);
    report(6, &criterion_6);
    report(7, &criterion_7);
    report(8, &criterion_8);
    report(9, &criterion_9);
    match std::env::var_os("TITAN_MOVIELENS_1M") {
        Some(p) => report(10, &|| criterion_10(PathBuf::from(&p))),
        None => println!("criterion 10: SKIP (set TITAN_MOVIELENS_1M to the MovieLens 1M ratings.dat)"),
    }
    match std::env::var_os("TITAN_CBCL") {
        Some(p) => report(11, &|| criterion_11(PathBuf::from(&p))),
        None => println!("criterion 11: SKIP (set TITAN_CBCL to the CBCL face matrix, .csv or .mtx)"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
