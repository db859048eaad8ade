//! Sparse nonnegative matrix factorization
//! `min ½‖M − UV‖²` over `U ≥ 0` with at most `s` nonzeros per column and `V ≥ 0`.

use std::sync::{Arc, Mutex};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{frob_sq, BlockVector, Objective, Problem};
use crate::error::{Error, Result};
use crate::extrapolation::{BetaRule, ExtrapolationConfig, InertiaKind, DEFAULT_C, DEFAULT_NU};
use crate::numerics::{hard_threshold_columns, largest_eigenvalue, PowerIterOptions};
use crate::scalar::Real;
use crate::solver::{titan_run, RunLog, Schedule, SolverOptions};
use crate::surrogate::{ConvexityMode, Modulus, SurrogateConfig, SurrogateKind};

pub const DEFAULT_KAPPA: f64 = 1.0001;

/// `⌈0.25 r⌉`
pub fn default_sparsity(r: usize) -> usize {
    r.div_ceil(4).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseNmfInstance<T> {
    pub m: Array2<T>,
    pub r: usize,
    pub s: usize,
    pub kappa: f64,
    pub c: f64,
    pub nu: f64,
}

impl<T: Real> SparseNmfInstance<T> {
    pub fn new(m: Array2<T>, r: usize) -> Result<Self> {
        let inst = Self {
            m,
            r,
            s: default_sparsity(r),
            kappa: DEFAULT_KAPPA,
            c: DEFAULT_C,
            nu: DEFAULT_NU,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_sparsity(mut self, s: usize) -> Result<Self> {
        self.s = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() {
            return Err(Error::Config("data matrix is empty".into()));
        }
        if self.m.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Config("data matrix must be finite and nonnegative".into()));
        }
        if self.r == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.s == 0 || self.s > self.m.nrows() {
            return Err(Error::Config(format!(
                "sparsity {} outside 1..={}",
                self.s,
                self.m.nrows()
            )));
        }
        if !(self.kappa >= 1.0) {
            return Err(Error::Config("κ must be at least 1".into()));
        }
        if !(self.c > 0.0 && self.c < 1.0 && self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::Config("C and ν must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

struct GramCache<T> {
    key: Array2<T>,
    gram: Array2<T>,
    cross: Array2<T>,
    lipschitz: T,
}

/// The factorization objective with its two indicator penalties.
///
/// The Gram products `VVᵀ, MVᵀ` (resp. `UᵀU, UᵀM`) are cached against the
/// last value of the frozen block, so repeated updates of the same block
/// cost `O(m r²)` (resp. `O(n r²)`) each.
pub struct SparseNmfProblem<T> {
    m: Array2<T>,
    s: usize,
    r: usize,
    power: PowerIterOptions,
    cache: [Mutex<Option<GramCache<T>>>; 2],
}

impl<T: Real> SparseNmfProblem<T> {
    pub fn new(m: Array2<T>, r: usize, s: usize) -> Result<Self> {
        if s == 0 || s > m.nrows() || r == 0 {
            return Err(Error::Config("invalid rank or sparsity".into()));
        }
        Ok(Self {
            m,
            s,
            r,
            power: PowerIterOptions::default(),
            cache: [Mutex::new(None), Mutex::new(None)],
        })
    }

    pub fn data(&self) -> &Array2<T> {
        &self.m
    }

    pub fn sparsity(&self) -> usize {
        self.s
    }

    /// Runs `f` on the Gram data of the block other than `i`.
    fn with_gram<R>(&self, i: usize, x: &BlockVector<T>, f: impl FnOnce(&GramCache<T>) -> R) -> R {
        let other = x.block(1 - i);
        let mut slot = self.cache[i].lock().unwrap_or_else(|e| e.into_inner());
        let fresh = slot.as_ref().is_some_and(|c| c.key == *other);
        if !fresh {
            let (gram, cross) = if i == 0 {
                (other.dot(&other.t()), self.m.dot(&other.t()))
            } else {
                (other.t().dot(other), other.t().dot(&self.m))
            };
            let lipschitz = largest_eigenvalue(gram.view(), &self.power)
                .expect("square Gram matrix")
                .max(T::modulus_floor());
            *slot = Some(GramCache {
                key: other.clone(),
                gram,
                cross,
                lipschitz,
            });
        }
        f(slot.as_ref().expect("filled above"))
    }

    /// `L_1 = ‖VVᵀ‖` for `i = 0`, `L_2 = ‖UᵀU‖` for `i = 1`.
    pub fn lipschitz(&self, i: usize, x: &BlockVector<T>) -> T {
        self.with_gram(i, x, |c| c.lipschitz)
    }

    pub fn project(&self, i: usize, z: ArrayView2<T>) -> Result<Array2<T>> {
        let pos = z.mapv(|v| v.max(T::zero()));
        if i == 0 {
            hard_threshold_columns(pos.view(), self.s)
        } else {
            Ok(pos)
        }
    }

    /// `‖M − UV‖_F / ‖M‖_F`
    pub fn relative_error(&self, u: ArrayView2<T>, v: ArrayView2<T>) -> T {
        let r = &self.m - &u.dot(&v);
        (frob_sq(&r) / frob_sq(&self.m)).sqrt()
    }
}

impl<T: Real> Problem<T> for SparseNmfProblem<T> {
    fn num_blocks(&self) -> usize {
        2
    }

    fn block_shape(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (self.m.nrows(), self.r)
        } else {
            (self.r, self.m.ncols())
        }
    }

    fn smooth_value(&self, x: &BlockVector<T>) -> Result<T> {
        let r = &self.m - &x.block(0).dot(x.block(1));
        Ok(T::lit(0.5) * frob_sq(&r))
    }

    fn block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>> {
        let own = x.block(i);
        Ok(self.with_gram(i, x, |c| {
            if i == 0 {
                own.dot(&c.gram) - &c.cross
            } else {
                c.gram.dot(own) - &c.cross
            }
        }))
    }

    fn penalty(&self, i: usize, xi: ArrayView2<T>) -> Objective<T> {
        if xi.iter().any(|&v| v < T::zero()) {
            return Objective::Infeasible;
        }
        if i == 0 {
            for col in xi.columns() {
                if col.iter().filter(|&&v| v != T::zero()).count() > self.s {
                    return Objective::Infeasible;
                }
            }
        }
        Objective::Finite(T::zero())
    }

    fn penalty_is_convex(&self, i: usize) -> bool {
        i == 1
    }

    fn nonsmooth_step(&self, i: usize, linear: ArrayView2<T>, weight: T, center: ArrayView2<T>) -> Result<Array2<T>> {
        let z = &center - &linear.mapv(|v| v / weight);
        self.project(i, z.view())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmfVariant {
    /// Nesterov-type extrapolation with `κ_1 > 1` on `U`.
    Titan,
    /// No extrapolation, `κ = 1` on both blocks.
    Palm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmfRunOptions {
    pub variant: NmfVariant,
    /// Update `U` `p` times, then `V` `q` times.
    pub repeats: Option<(usize, usize)>,
    pub solver: SolverOptions,
    /// Replaces the per-block extrapolation recipe.
    pub extrapolation: Option<Vec<ExtrapolationConfig>>,
}

impl Default for NmfRunOptions {
    fn default() -> Self {
        Self {
            variant: NmfVariant::Titan,
            repeats: None,
            solver: SolverOptions::default(),
            extrapolation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NmfResult<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
    /// Per-iteration metric is the relative error `‖M − UV‖/‖M‖`.
    pub log: RunLog,
}

/// Block surrogates: `U` with `κ_1 L_1` (nonconvex `g_1`), `V` with `L_2`.
pub fn nmf_surrogates<T: Real>(
    problem: &Arc<SparseNmfProblem<T>>,
    inst: &SparseNmfInstance<T>,
    variant: NmfVariant,
) -> Result<Vec<SurrogateConfig<T>>> {
    let kappa = match variant {
        NmfVariant::Titan => T::lit(inst.kappa),
        NmfVariant::Palm => T::one(),
    };
    let (mode_u, mode_v) = match variant {
        NmfVariant::Titan => (ConvexityMode::BlockFConvex, ConvexityMode::FullyConvex),
        NmfVariant::Palm => (ConvexityMode::General, ConvexityMode::FullyConvex),
    };
    let lip = |i: usize| {
        let p = Arc::clone(problem);
        Modulus::callback(move |_, y: &BlockVector<T>| Ok(p.lipschitz(i, y)))
    };
    Ok(vec![
        SurrogateConfig::new(SurrogateKind::Lipschitz { kappa, lipschitz: lip(0) }, mode_u)?,
        SurrogateConfig::new(
            SurrogateKind::Lipschitz {
                kappa: T::one(),
                lipschitz: lip(1),
            },
            mode_v,
        )?,
    ])
}

/// Nesterov two-point extrapolation with `β^k = min{(μ_{k−1}−1)/μ_k, bound}` on both blocks.
pub fn nmf_extrapolation<T: Real>(inst: &SparseNmfInstance<T>, variant: NmfVariant) -> Vec<ExtrapolationConfig> {
    let cfg = match variant {
        NmfVariant::Titan => ExtrapolationConfig {
            kind: InertiaKind::NesterovTwoPoint { tau_ratio: 1.0 },
            beta: BetaRule::Nesterov,
            c: inst.c,
            nu: inst.nu,
            cap: true,
            bound_scale: 1.0,
        },
        NmfVariant::Palm => ExtrapolationConfig {
            c: inst.c,
            nu: inst.nu,
            ..ExtrapolationConfig::none()
        },
    };
    vec![cfg; 2]
}

/// Uniform `[0, 1)` factors with `U` projected onto the sparsity constraint.
pub fn nmf_initial_point<T: Real>(inst: &SparseNmfInstance<T>, seed: u64) -> Result<BlockVector<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = inst.m.dim();
    let u = Array2::from_shape_simple_fn((m, inst.r), || T::lit(rng.random::<f64>()));
    let v = Array2::from_shape_simple_fn((inst.r, n), || T::lit(rng.random::<f64>()));
    let u = hard_threshold_columns(u.view(), inst.s)?;
    BlockVector::new(vec![u, v])
}

pub fn sparse_nmf_run<T: Real>(inst: &SparseNmfInstance<T>, opts: &NmfRunOptions, seed: u64) -> Result<NmfResult<T>> {
    let x0 = nmf_initial_point(inst, seed)?;
    sparse_nmf_run_from(inst, opts, x0)
}

pub fn sparse_nmf_run_from<T: Real>(
    inst: &SparseNmfInstance<T>,
    opts: &NmfRunOptions,
    x0: BlockVector<T>,
) -> Result<NmfResult<T>> {
    inst.validate()?;
    let problem = Arc::new(SparseNmfProblem::new(inst.m.clone(), inst.r, inst.s)?);
    let cfgs = nmf_surrogates(&problem, inst, opts.variant)?;
    let ex = opts
        .extrapolation
        .clone()
        .unwrap_or_else(|| nmf_extrapolation(inst, opts.variant));
    let schedule = match opts.repeats {
        Some((p, q)) => Schedule::repeated(&[p, q]),
        None => Schedule::Cyclic,
    };
    let (x, mut log) = titan_run(problem.as_ref(), &cfgs, &ex, &schedule, &opts.solver, x0, None)?;
    let norm_m = frob_sq(&inst.m).to_f64_lossy().sqrt();
    let rel = |f: f64| (2.0 * f.max(0.0)).sqrt() / norm_m;
    log.initial_metric = Some(rel(log.initial_objective));
    for rec in &mut log.records {
        rec.metric = Some(rel(rec.objective));
    }
    let mut blocks = x.into_blocks().into_iter();
    let u = blocks.next().expect("two blocks");
    let v = blocks.next().expect("two blocks");
    Ok(NmfResult { u, v, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::synth::{synthesize_nmf, NmfSynthSpec};

    fn small() -> SparseNmfInstance<f64> {
        let spec = NmfSynthSpec {
            rows: 30,
            cols: 20,
            rank: 3,
            sparsity: None,
            noise: 0.0,
        };
        synthesize_nmf(&spec, 3).unwrap().0
    }

    #[test]
    fn gradients_match_finite_differences() {
        let inst = small();
        let p = SparseNmfProblem::new(inst.m.clone(), inst.r, inst.s).unwrap();
        let x = nmf_initial_point(&inst, 1).unwrap();
        for i in 0..2 {
            let g = p.block_gradient(i, &x).unwrap();
            let err = crate::numerics::grad_check(
                |xi| p.smooth_value(&x.with_block(i, xi).unwrap()).unwrap(),
                g.view(),
                x.block(i).view(),
                crate::numerics::default_fd_step(x.block(i).view()),
            )
            .unwrap();
            assert!(err < 1e-6, "block {i}: {err}");
        }
    }

    #[test]
    fn iterates_stay_feasible() {
        let inst = small();
        let opts = NmfRunOptions {
            solver: SolverOptions {
                max_iters: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = sparse_nmf_run(&inst, &opts, 7).unwrap();
        assert!(res.u.iter().all(|&v| v >= 0.0));
        assert!(res.v.iter().all(|&v| v >= 0.0));
        for col in res.u.columns() {
            assert!(col.iter().filter(|&&v| v != 0.0).count() <= inst.s);
        }
        assert!(res.log.final_objective() < res.log.initial_objective);
    }

    #[test]
    fn cache_tracks_frozen_block() {
        let inst = small();
        let p = SparseNmfProblem::new(inst.m.clone(), inst.r, inst.s).unwrap();
        let x = nmf_initial_point(&inst, 1).unwrap();
        let g1 = p.block_gradient(0, &x).unwrap();
        let v2 = x.block(1).mapv(|v| 2.0 * v);
        let x2 = x.with_block(1, v2.view()).unwrap();
        let g2 = p.block_gradient(0, &x2).unwrap();
        let direct = x2.block(0).dot(&v2).dot(&v2.t()) - inst.m.dot(&v2.t());
        assert!(g1 != g2);
        for (a, b) in g2.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
