mod common;

use titan_core::apps::{sparse_nmf_run, synthesize_nmf, NmfRunOptions, NmfSynthSpec};
use titan_core::extrapolation::DEFAULT_C;
use titan_core::solver::{finite_length_bound, telescoping_check, telescoping_sides, MonitorLevel, SolverOptions, StopReason};

fn run(repeats: Option<(usize, usize)>, iters: usize) -> titan_core::solver::RunLog {
    let spec = NmfSynthSpec {
        rows: 40,
        cols: 30,
        rank: 4,
        sparsity: None,
        noise: 0.02,
    };
    let (inst, _) = synthesize_nmf::<f64>(&spec, 17).unwrap();
    let opts = NmfRunOptions {
        repeats,
        solver: SolverOptions {
            max_iters: iters,
            stop_tolerance: None,
            monitor: MonitorLevel::Full,
            ..SolverOptions::default()
        },
        ..NmfRunOptions::default()
    };
    sparse_nmf_run(&inst, &opts, 3).unwrap().log
}

#[test]
fn essentially_cyclic_updates_satisfy_the_decrease_inequality() {
    let log = run(Some((5, 5)), 200);
    assert_eq!(log.records.len(), 200);
    assert_eq!(log.records[0].updates.len(), 10);
    for rec in &log.records {
        let blocks: Vec<usize> = rec.updates.iter().map(|u| u.block).collect();
        assert_eq!(blocks, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        for u in &rec.updates {
            let r = u.nsdp_residual.unwrap();
            assert!(r >= -1e-8 * (1.0 + u.f_after.unwrap().abs()), "{r}");
            assert!(u.condition4);
        }
    }
    let (total, bound) = finite_length_bound(&log, DEFAULT_C, 0.0).unwrap();
    assert!(total <= bound);
    for k in [1, 50, 200] {
        assert!(telescoping_check(&log, DEFAULT_C, k).unwrap());
    }
}

#[test]
fn telescoping_agrees_with_direct_accumulation() {
    let log = run(None, 120);
    let direct = common::telescoped(&log, DEFAULT_C);
    for k in 1..=120 {
        let (lhs, rhs) = telescoping_sides(&log, DEFAULT_C, k).unwrap();
        let (l, r) = direct[k - 1];
        assert!((lhs - l).abs() <= 1e-12 * l.abs().max(1.0));
        assert!((rhs - r).abs() <= 1e-12 * r.abs().max(1.0));
        assert!(telescoping_check(&log, DEFAULT_C, k).unwrap());
    }
    let (lhs, rhs) = telescoping_sides(&log, DEFAULT_C, 1).unwrap();
    let first: f64 = log.records[0].updates.iter().map(|u| 0.5 * u.eta * u.step_norm_sq).sum();
    assert_eq!(rhs, log.initial_objective);
    assert!((lhs - (log.records[0].objective + (1.0 - DEFAULT_C) * first)).abs() <= 1e-12 * rhs.abs());
    assert!(telescoping_sides(&log, DEFAULT_C, 121).is_err());
}

#[test]
fn time_budget_stops_the_run() {
    let spec = NmfSynthSpec {
        rows: 40,
        cols: 30,
        rank: 4,
        sparsity: None,
        noise: 0.02,
    };
    let (inst, _) = synthesize_nmf::<f64>(&spec, 1).unwrap();
    let opts = NmfRunOptions {
        solver: SolverOptions {
            max_iters: usize::MAX,
            time_budget_seconds: Some(0.05),
            stop_tolerance: None,
            monitor: MonitorLevel::Off,
            ..SolverOptions::default()
        },
        ..NmfRunOptions::default()
    };
    let log = sparse_nmf_run(&inst, &opts, 1).unwrap().log;
    assert_eq!(log.stop_reason, StopReason::TimeBudget);
    assert!(!log.records.is_empty());
}
