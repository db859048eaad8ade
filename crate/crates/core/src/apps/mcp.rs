//! Matrix completion with exponential regularization
//! `min ½‖P(A − UV)‖² + λ Σ (1 − e^{−θ|u_ij|}) + λ Σ (1 − e^{−θ|v_ij|})`.

use std::collections::HashSet;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::block::{frob_sq, BlockVector, CompositeStructure, ObservationMask, Objective, Problem};
use crate::error::{Error, Result};
use crate::extrapolation::{BetaRule, ExtrapolationConfig, InertiaKind, DEFAULT_C, DEFAULT_NU};
use crate::numerics::{
    orthonormalize, prox_exponential, soft_threshold_weighted, spectral_norm_gram, symmetric_eigen, GramSide,
    PowerIterOptions,
};
use crate::scalar::Real;
use crate::solver::{titan_run_observed, RunLog, Schedule, SolverOptions};
use crate::surrogate::{ConvexityMode, Modulus, SurrogateConfig, SurrogateKind};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_THETA: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McpVariant {
    /// Composite surrogate with Nesterov extrapolation.
    TitanExtra,
    /// Composite surrogate, no extrapolation.
    TitanNo,
    /// Linearized `ψ` with the exact exponential prox.
    Palm,
}

impl McpVariant {
    pub const ALL: [McpVariant; 3] = [McpVariant::TitanExtra, McpVariant::TitanNo, McpVariant::Palm];

    pub fn name(&self) -> &'static str {
        match self {
            McpVariant::TitanExtra => "titan_extra",
            McpVariant::TitanNo => "titan_no",
            McpVariant::Palm => "palm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McpInstance<T> {
    pub observed: ObservationMask<T>,
    pub test: ObservationMask<T>,
    pub r: usize,
    pub lambda: f64,
    pub theta: f64,
    pub variant: McpVariant,
}

impl<T: Real> McpInstance<T> {
    pub fn new(observed: ObservationMask<T>, test: ObservationMask<T>, r: usize) -> Result<Self> {
        let inst = Self {
            observed,
            test,
            r,
            lambda: DEFAULT_LAMBDA,
            theta: DEFAULT_THETA,
            variant: McpVariant::TitanExtra,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_variant(mut self, variant: McpVariant) -> Self {
        self.variant = variant;
        self
    }

    /// `λ = 0` is accepted and turns the problem into plain masked least squares.
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("λ must be nonnegative, got {}", self.lambda)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("θ must be positive, got {}", self.theta)));
        }
        if self.observed.rows() != self.test.rows() || self.observed.cols() != self.test.cols() {
            return Err(Error::Config("train and test masks have different dimensions".into()));
        }
        let train: HashSet<(usize, usize)> = self.observed.entries().iter().map(|e| (e.row, e.col)).collect();
        if let Some(e) = self.test.entries().iter().find(|e| train.contains(&(e.row, e.col))) {
            return Err(Error::Config(format!(
                "entry ({}, {}) is in both the train and the test set",
                e.row, e.col
            )));
        }
        Ok(())
    }
}

/// `√(‖P_T(A − UV)‖²/N_T)`
pub fn rmse<T: Real>(test: &ObservationMask<T>, u: ArrayView2<T>, v: ArrayView2<T>) -> Result<T> {
    if test.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    Ok((test.residual_norm_sq(u, v) / T::lit(test.len() as f64)).sqrt())
}

/// `f = ψ + φ∘r` on the training mask, with `g = 0`.
pub struct McpProblem<T> {
    mask: ObservationMask<T>,
    r: usize,
    lambda: T,
    theta: T,
    power: PowerIterOptions,
}

impl<T: Real> McpProblem<T> {
    pub fn new(mask: ObservationMask<T>, r: usize, lambda: f64, theta: f64) -> Self {
        Self {
            mask,
            r,
            lambda: T::lit(lambda),
            theta: T::lit(theta),
            power: PowerIterOptions::default(),
        }
    }

    pub fn mask(&self) -> &ObservationMask<T> {
        &self.mask
    }

    /// `½‖P(A − UV)‖²`
    pub fn psi(&self, u: ArrayView2<T>, v: ArrayView2<T>) -> T {
        T::lit(0.5) * self.mask.residual_norm_sq(u, v)
    }

    /// `(∇_U ψ, ∇_V ψ)`; only the requested block is formed.
    pub fn psi_gradient(&self, i: usize, u: ArrayView2<T>, v: ArrayView2<T>) -> Array2<T> {
        let res = self.mask.residuals(u, v);
        let entries = self.mask.entries();
        if i == 0 {
            let vt = v.t().as_standard_layout().into_owned();
            let mut out = Array2::zeros((u.nrows(), self.r));
            for (e, &rv) in entries.iter().zip(&res) {
                out.row_mut(e.row).scaled_add(-rv, &vt.row(e.col));
            }
            out
        } else {
            let mut out_t = Array2::zeros((v.ncols(), self.r));
            for (e, &rv) in entries.iter().zip(&res) {
                out_t.row_mut(e.col).scaled_add(-rv, &u.row(e.row));
            }
            out_t.t().as_standard_layout().into_owned()
        }
    }

    /// `λ Σ (1 − e^{−θ|x|})`
    pub fn regularizer(&self, x: ArrayView2<T>) -> T {
        let (l, t) = (self.lambda, self.theta);
        x.iter().fold(T::zero(), |acc, &v| acc + l * (T::one() - (-t * v.abs()).exp()))
    }

    /// `λθ e^{−θ|x|}`, the gradient of `φ` at `r(x) = |x|`.
    pub fn reg_weights(&self, x: ArrayView2<T>) -> Array2<T> {
        let (l, t) = (self.lambda, self.theta);
        x.mapv(|v| l * t * (-t * v.abs()).exp())
    }

    /// `L_1 = ‖VVᵀ‖` for `i = 0`, `L_2 = ‖UᵀU‖` for `i = 1`.
    pub fn lipschitz(&self, i: usize, x: &BlockVector<T>) -> Result<T> {
        let (block, side) = if i == 0 {
            (x.block(1), GramSide::Left)
        } else {
            (x.block(0), GramSide::Right)
        };
        spectral_norm_gram(block.view(), side, &self.power)
    }

    pub fn objective(&self, u: ArrayView2<T>, v: ArrayView2<T>) -> T {
        self.psi(u, v) + self.regularizer(u) + self.regularizer(v)
    }
}

impl<T: Real> Problem<T> for McpProblem<T> {
    fn num_blocks(&self) -> usize {
        2
    }

    fn block_shape(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (self.mask.rows(), self.r)
        } else {
            (self.r, self.mask.cols())
        }
    }

    fn smooth_value(&self, x: &BlockVector<T>) -> Result<T> {
        Ok(self.objective(x.block(0).view(), x.block(1).view()))
    }

    /// Gradient of `f` away from zero entries; `sign(0) = 0` is used at the kinks.
    fn block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>> {
        let g = self.psi_gradient(i, x.block(0).view(), x.block(1).view());
        let xi = x.block(i);
        let w = self.reg_weights(xi.view());
        Ok(g + &(&w * &xi.mapv(|v| if v == T::zero() { T::zero() } else { v.signum() })))
    }

    fn penalty(&self, _i: usize, _xi: ArrayView2<T>) -> Objective<T> {
        Objective::Finite(T::zero())
    }

    fn penalty_is_convex(&self, _i: usize) -> bool {
        true
    }

    fn is_unconstrained(&self, _i: usize) -> bool {
        true
    }

    fn nonsmooth_step(&self, _i: usize, linear: ArrayView2<T>, weight: T, center: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(&center - &linear.mapv(|v| v / weight))
    }

    fn composite(&self) -> Option<&dyn CompositeStructure<T>> {
        Some(self)
    }
}

impl<T: Real> CompositeStructure<T> for McpProblem<T> {
    fn inner_value(&self, x: &BlockVector<T>) -> Result<T> {
        Ok(self.psi(x.block(0).view(), x.block(1).view()))
    }

    fn inner_block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>> {
        Ok(self.psi_gradient(i, x.block(0).view(), x.block(1).view()))
    }

    fn map_block(&self, _i: usize, xi: ArrayView2<T>) -> Array2<T> {
        xi.mapv(|v| v.abs())
    }

    fn outer_value(&self, mapped: &BlockVector<T>) -> T {
        self.regularizer(mapped.block(0).view()) + self.regularizer(mapped.block(1).view())
    }

    fn outer_block_gradient(&self, i: usize, mapped: &BlockVector<T>) -> Array2<T> {
        self.reg_weights(mapped.block(i).view())
    }

    fn map_lipschitz(&self, _i: usize) -> T {
        T::one()
    }

    fn outer_lipschitz(&self, _i: usize) -> T {
        self.lambda * self.theta * self.theta
    }

    fn linearized_step(
        &self,
        _i: usize,
        weights: ArrayView2<T>,
        linear: ArrayView2<T>,
        weight: T,
        center: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        let p = &center - &linear.mapv(|v| v / weight);
        soft_threshold_weighted(p.view(), weights, T::one() / weight)
    }
}

/// `f = ψ`, `g_i = λ Σ (1 − e^{−θ|x|})`: the splitting used by the PALM baseline.
pub struct PalmMcpProblem<T> {
    inner: Arc<McpProblem<T>>,
}

impl<T: Real> PalmMcpProblem<T> {
    pub fn new(inner: Arc<McpProblem<T>>) -> Self {
        Self { inner }
    }
}

impl<T: Real> Problem<T> for PalmMcpProblem<T> {
    fn num_blocks(&self) -> usize {
        2
    }

    fn block_shape(&self, i: usize) -> (usize, usize) {
        self.inner.block_shape(i)
    }

    fn smooth_value(&self, x: &BlockVector<T>) -> Result<T> {
        self.inner.inner_value(x)
    }

    fn block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>> {
        self.inner.inner_block_gradient(i, x)
    }

    fn penalty(&self, _i: usize, xi: ArrayView2<T>) -> Objective<T> {
        Objective::Finite(self.inner.regularizer(xi))
    }

    fn penalty_is_convex(&self, _i: usize) -> bool {
        false
    }

    fn nonsmooth_step(&self, _i: usize, linear: ArrayView2<T>, weight: T, center: ArrayView2<T>) -> Result<Array2<T>> {
        let gamma = self.inner.lambda / weight;
        let theta = self.inner.theta;
        let v = &center - &linear.mapv(|c| c / weight);
        if gamma == T::zero() {
            return Ok(v);
        }
        Ok(v.mapv(|vi| prox_exponential(vi, gamma, theta)))
    }
}

/// Starting point shared by all variants: `U^0` spans an approximate range of
/// `P(A)` (randomized subspace iteration, `r` sweeps, tolerance `1e−6`), and
/// `V^0` holds the right singular vectors of `(U^0)ᵀP(A)` as rows.
pub fn mcp_initial_point<T: Real>(mask: &ObservationMask<T>, r: usize, seed: u64) -> Result<BlockVector<T>> {
    if mask.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_simple_fn((mask.cols(), r), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    let mut q = orthonormalize(mask.mul_dense(omega.view()).view());
    for _ in 0..r {
        let y = mask.mul_dense(mask.tmul_dense(q.view()).view());
        let q_new = orthonormalize(y.view());
        let drift = &q_new - &q.dot(&q.t().dot(&q_new));
        q = q_new;
        if (frob_sq(&drift) / T::lit(r as f64)).sqrt() < T::lit(1e-6) {
            break;
        }
    }
    // B = QᵀP(A) is r × n; its SVD comes from the eigenpairs of B Bᵀ.
    let b = mask.tmul_dense(q.view()).reversed_axes();
    let (vals, w) = symmetric_eigen(b.dot(&b.t()).view())?;
    let top = vals.iter().fold(T::zero(), |m, &v| m.max(v)).sqrt();
    let mut v0 = w.t().dot(&b);
    for (k, mut row) in v0.axis_iter_mut(Axis(0)).enumerate() {
        let sigma = vals[k].max(T::zero()).sqrt();
        if sigma > T::lit(1e-12) * top && sigma > T::zero() {
            row.mapv_inplace(|x| x / sigma);
        } else {
            row.fill(T::zero());
        }
    }
    BlockVector::new(vec![q, v0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct McpRunOptions {
    pub solver: SolverOptions,
    /// RMSE checkpoint period in outer iterations.
    pub rmse_every: usize,
    /// Replaces the extrapolation recipe of the variant.
    pub extrapolation: Option<Vec<ExtrapolationConfig>>,
}

impl Default for McpRunOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            rmse_every: 10,
            extrapolation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McpResult<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
    pub log: RunLog,
    /// `(iteration, test RMSE)` at every checkpoint, starting with iteration 0.
    pub rmse_trace: Vec<(usize, f64)>,
}

/// Nesterov two-point extrapolation with `β^k = min{(μ_k − 1)/μ_k, bound}`.
pub fn mcp_extrapolation(variant: McpVariant) -> Vec<ExtrapolationConfig> {
    let cfg = match variant {
        McpVariant::TitanExtra => ExtrapolationConfig {
            kind: InertiaKind::NesterovTwoPoint { tau_ratio: 1.0 },
            beta: BetaRule::NesterovLiteral,
            c: DEFAULT_C,
            nu: DEFAULT_NU,
            cap: true,
            bound_scale: 1.0,
        },
        McpVariant::TitanNo | McpVariant::Palm => ExtrapolationConfig::none(),
    };
    vec![cfg; 2]
}

pub fn mcp_surrogates<T: Real>(problem: &Arc<McpProblem<T>>, variant: McpVariant) -> Result<Vec<SurrogateConfig<T>>> {
    (0..2)
        .map(|_| {
            let p = Arc::clone(problem);
            let lip = SurrogateKind::Lipschitz {
                kappa: T::one(),
                lipschitz: Modulus::callback(move |i, y: &BlockVector<T>| p.lipschitz(i, y)),
            };
            match variant {
                McpVariant::Palm => SurrogateConfig::new(lip, ConvexityMode::General),
                _ => SurrogateConfig::new(SurrogateKind::Composite { inner: Box::new(lip) }, ConvexityMode::FullyConvex),
            }
        })
        .collect()
}

pub fn mcp_run<T: Real>(inst: &McpInstance<T>, opts: &McpRunOptions, seed: u64) -> Result<McpResult<T>> {
    inst.validate()?;
    let x0 = mcp_initial_point(&inst.observed, inst.r, seed)?;
    mcp_run_from(inst, opts, x0)
}

pub fn mcp_run_from<T: Real>(inst: &McpInstance<T>, opts: &McpRunOptions, x0: BlockVector<T>) -> Result<McpResult<T>> {
    inst.validate()?;
    if inst.test.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    if opts.rmse_every == 0 {
        return Err(Error::Config("RMSE checkpoint period must be positive".into()));
    }
    let problem = Arc::new(McpProblem::new(inst.observed.clone(), inst.r, inst.lambda, inst.theta));
    let cfgs = mcp_surrogates(&problem, inst.variant)?;
    let ex = opts.extrapolation.clone().unwrap_or_else(|| mcp_extrapolation(inst.variant));
    let palm;
    let target: &dyn Problem<T> = match inst.variant {
        McpVariant::Palm => {
            palm = PalmMcpProblem::new(Arc::clone(&problem));
            &palm
        }
        _ => problem.as_ref(),
    };
    let every = opts.rmse_every;
    let test = &inst.test;
    let mut observer = |k: usize, x: &BlockVector<T>| -> Option<f64> {
        k.is_multiple_of(every).then(|| {
            rmse(test, x.block(0).view(), x.block(1).view())
                .map(|v| v.to_f64_lossy())
                .unwrap_or(f64::NAN)
        })
    };
    let (x, log) = titan_run_observed(target, &cfgs, &ex, &Schedule::Cyclic, &opts.solver, x0, None, &mut observer)?;
    let mut rmse_trace = Vec::new();
    if let Some(m) = log.initial_metric {
        rmse_trace.push((0, m));
    }
    rmse_trace.extend(log.records.iter().filter_map(|r| r.metric.map(|m| (r.iteration, m))));
    let mut blocks = x.into_blocks().into_iter();
    let u = blocks.next().expect("two blocks");
    let v = blocks.next().expect("two blocks");
    Ok(McpResult { u, v, log, rmse_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::synth::{synthesize_mcp, McpSynthSpec};
    use crate::numerics::{default_fd_step, grad_check};

    fn instance(seed: u64) -> McpInstance<f64> {
        let spec = McpSynthSpec {
            rows: 40,
            cols: 30,
            rank: 3,
            noise: 0.01,
            density: 0.5,
            train_fraction: 0.7,
        };
        synthesize_mcp(&spec, seed).unwrap()
    }

    #[test]
    fn psi_gradient_matches_finite_differences() {
        let inst = instance(1);
        let p = McpProblem::new(inst.observed.clone(), inst.r, 0.1, 5.0);
        let x = mcp_initial_point(&inst.observed, inst.r, 2).unwrap();
        for i in 0..2 {
            let g = p.inner_block_gradient(i, &x).unwrap();
            let err = grad_check(
                |xi| p.inner_value(&x.with_block(i, xi).unwrap()).unwrap(),
                g.view(),
                x.block(i).view(),
                default_fd_step(x.block(i).view()),
            )
            .unwrap();
            assert!(err < 1e-6, "block {i}: {err}");
        }
    }

    #[test]
    fn initial_point_is_orthonormal() {
        let inst = instance(3);
        let x = mcp_initial_point(&inst.observed, inst.r, 4).unwrap();
        let qtq = x.block(0).t().dot(x.block(0));
        for i in 0..inst.r {
            for j in 0..inst.r {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - want).abs() < 1e-10);
            }
        }
        let vvt = x.block(1).dot(&x.block(1).t());
        for i in 0..inst.r {
            assert!((vvt[[i, i]] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rmse_edge_cases() {
        let test = ObservationMask::from_triplets(2, 2, &[(0, 1, 3.0)]).unwrap();
        let u = ndarray::array![[1.0], [0.0]];
        let v = ndarray::array![[0.0, 1.0]];
        assert_eq!(rmse(&test, u.view(), v.view()).unwrap(), 2.0);
        let empty = ObservationMask::<f64>::new(2, 2, vec![]).unwrap();
        assert!(matches!(rmse(&empty, u.view(), v.view()), Err(Error::Empty(_))));
    }

    #[test]
    fn all_variants_decrease_the_objective() {
        for variant in McpVariant::ALL {
            let inst = instance(5).with_variant(variant);
            let opts = McpRunOptions {
                solver: SolverOptions {
                    max_iters: 30,
                    ..Default::default()
                },
                ..Default::default()
            };
            let res = mcp_run(&inst, &opts, 9).unwrap();
            assert!(res.log.final_objective() < res.log.initial_objective, "{variant:?}");
            assert_eq!(res.rmse_trace[0].0, 0);
        }
    }
}
