//! Block-structured iterates, the problem abstraction `F = f + Σ g_i`, and
//! sparse observation masks for partially observed matrices.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::surrogate::Kernel;

/// The iterate `x = (x_1, ..., x_m)`, one dense matrix per block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector<T> {
    blocks: Vec<Array2<T>>,
}

impl<T: Real> BlockVector<T> {
    pub fn new(blocks: Vec<Array2<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument(
                "a block vector needs at least one block".into(),
            ));
        }
        Ok(Self { blocks })
    }

    pub fn zeros(shapes: &[(usize, usize)]) -> Result<Self> {
        Self::new(shapes.iter().map(|&s| Array2::zeros(s)).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &Array2<T> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Array2<T>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Array2<T>> {
        self.blocks
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| b.dim()).collect()
    }

    /// Replaces block `i`; the shape must not change.
    pub fn set_block(&mut self, i: usize, value: Array2<T>) -> Result<()> {
        check_shape("set_block", self.blocks[i].dim(), value.dim())?;
        self.blocks[i] = value;
        Ok(())
    }

    /// Copy of `self` with block `i` replaced by `xi`: the point `(x_i, y_{≠i})`.
    pub fn with_block(&self, i: usize, xi: ArrayView2<T>) -> Result<Self> {
        check_shape("with_block", self.blocks[i].dim(), xi.dim())?;
        let mut out = self.clone();
        out.blocks[i].assign(&xi);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn norm_sq(&self) -> T {
        self.blocks.iter().map(frob_sq).sum()
    }
}

/// Returns `a·x + y` blockwise.
pub fn block_axpy<T: Real>(a: T, x: &BlockVector<T>, y: &BlockVector<T>) -> Result<BlockVector<T>> {
    if x.num_blocks() != y.num_blocks() {
        return Err(Error::BlockCount {
            expected: x.num_blocks(),
            found: y.num_blocks(),
        });
    }
    let blocks = x
        .blocks
        .iter()
        .zip(&y.blocks)
        .map(|(xb, yb)| {
            check_shape("block_axpy", xb.dim(), yb.dim())?;
            Ok(Zip::from(xb).and(yb).map_collect(|&xv, &yv| a * xv + yv))
        })
        .collect::<Result<Vec<_>>>()?;
    BlockVector::new(blocks)
}

pub(crate) fn check_shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Squared Frobenius norm.
pub fn frob_sq<T: Real>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Frobenius inner product `⟨a, b⟩`.
pub fn frob_dot<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> T {
    let mut acc = T::zero();
    Zip::from(a).and(b).for_each(|&x, &y| acc += x * y);
    acc
}

/// `‖a − b‖²` without allocating.
pub fn dist_sq<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> T {
    let mut acc = T::zero();
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = x - y;
        acc += d * d;
    });
    acc
}

/// Value of a block penalty `g_i`: finite, or the indicator sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective<T> {
    Finite(T),
    Infeasible,
}

impl<T: Real> Objective<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Objective::Finite(_))
    }

    /// Finite value, or `+∞` for the infeasible sentinel.
    pub fn to_real(self) -> T {
        match self {
            Objective::Finite(v) => v,
            Objective::Infeasible => T::infinity(),
        }
    }

    pub fn finite(self) -> Option<T> {
        match self {
            Objective::Finite(v) => Some(v),
            Objective::Infeasible => None,
        }
    }

    pub fn add(self, other: Objective<T>) -> Objective<T> {
        match (self, other) {
            (Objective::Finite(a), Objective::Finite(b)) => Objective::Finite(a + b),
            _ => Objective::Infeasible,
        }
    }
}

/// Problem `min F(x) = f(x_1, ..., x_m) + Σ_i g_i(x_i)`.
///
/// `f` is evaluated through [`Problem::smooth_value`] and its block gradients;
/// each `g_i` is reached only through its value and the step oracle
/// [`Problem::nonsmooth_step`].
pub trait Problem<T: Real>: Send + Sync {
    fn num_blocks(&self) -> usize;

    fn block_shape(&self, i: usize) -> (usize, usize);

    /// Value of `f`.
    fn smooth_value(&self, x: &BlockVector<T>) -> Result<T>;

    /// `∇_i f(x)`.
    fn block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>>;

    /// Value of `g_i(x_i)`; indicators return [`Objective::Infeasible`] outside their set.
    fn penalty(&self, i: usize, xi: ArrayView2<T>) -> Objective<T>;

    fn penalty_is_convex(&self, i: usize) -> bool;

    /// True when `g_i ≡ 0` and `X_i` is the whole space.
    fn is_unconstrained(&self, _i: usize) -> bool {
        false
    }

    /// `argmin_x ⟨c, x⟩ + (λ/2)‖x − z‖² + g_i(x)`.
    fn nonsmooth_step(
        &self,
        i: usize,
        linear: ArrayView2<T>,
        weight: T,
        center: ArrayView2<T>,
    ) -> Result<Array2<T>>;

    /// Composite structure `f = ψ + φ∘r`, when the problem has one.
    fn composite(&self) -> Option<&dyn CompositeStructure<T>> {
        None
    }

    /// Solver for `argmin_x ⟨c, x⟩ + w·D_φ(x, z) + g_i(x)` with a non-Euclidean
    /// kernel `φ`, if one is available.
    fn mirror_step(
        &self,
        _i: usize,
        _linear: ArrayView2<T>,
        _weight: T,
        _kernel: &dyn Kernel<T>,
        _center: ArrayView2<T>,
    ) -> Result<Option<Array2<T>>> {
        Ok(None)
    }

    /// Exact solver for `argmin_x f(x, y_{≠i}) + (ρ/2)‖x − z‖² + g_i(x)`, if one is known.
    fn proximal_step(
        &self,
        _i: usize,
        _y: &BlockVector<T>,
        _rho: T,
        _center: ArrayView2<T>,
    ) -> Result<Option<Array2<T>>> {
        Ok(None)
    }
}

/// Decomposition `f(x) = ψ(x) + φ(r(x))` with `φ` block-wise concave and
/// `r = (r_1, ..., r_m)` Lipschitz.
pub trait CompositeStructure<T: Real>: Send + Sync {
    /// `ψ(x)`.
    fn inner_value(&self, x: &BlockVector<T>) -> Result<T>;

    /// `∇_i ψ(x)`.
    fn inner_block_gradient(&self, i: usize, x: &BlockVector<T>) -> Result<Array2<T>>;

    /// `r_i(x_i)`.
    fn map_block(&self, i: usize, xi: ArrayView2<T>) -> Array2<T>;

    /// `φ(r)` for an already mapped point `r = r(x)`.
    fn outer_value(&self, mapped: &BlockVector<T>) -> T;

    /// `∇_i φ(r)`.
    fn outer_block_gradient(&self, i: usize, mapped: &BlockVector<T>) -> Array2<T>;

    /// Lipschitz constant `L_{r_i}` of `r_i`.
    fn map_lipschitz(&self, i: usize) -> T;

    /// Lipschitz constant `L_i^φ` of `∇_i φ`.
    fn outer_lipschitz(&self, i: usize) -> T;

    /// `argmin_x ⟨c, x⟩ + (λ/2)‖x − z‖² + ⟨W, r_i(x)⟩ + g_i(x)`.
    fn linearized_step(
        &self,
        i: usize,
        weights: ArrayView2<T>,
        linear: ArrayView2<T>,
        weight: T,
        center: ArrayView2<T>,
    ) -> Result<Array2<T>>;

    /// `r(x)` blockwise.
    fn map(&self, x: &BlockVector<T>) -> Result<BlockVector<T>> {
        BlockVector::new(
            x.blocks()
                .iter()
                .enumerate()
                .map(|(i, b)| self.map_block(i, b.view()))
                .collect(),
        )
    }
}

/// `F(x) = f(x) + Σ g_i(x_i)`.
pub fn objective_value<T: Real>(p: &dyn Problem<T>, x: &BlockVector<T>) -> Result<Objective<T>> {
    if x.num_blocks() != p.num_blocks() {
        return Err(Error::BlockCount {
            expected: p.num_blocks(),
            found: x.num_blocks(),
        });
    }
    for i in 0..p.num_blocks() {
        check_shape("objective_value", p.block_shape(i), x.block(i).dim())?;
    }
    let f = p.smooth_value(x)?;
    if f.is_nan() {
        return Err(Error::Numerical("smooth part evaluated to NaN".into()));
    }
    let mut total = Objective::Finite(f);
    for i in 0..p.num_blocks() {
        let g = p.penalty(i, x.block(i).view());
        if let Objective::Finite(v) = g {
            if v.is_nan() {
                return Err(Error::Numerical(format!("penalty of block {i} evaluated to NaN")));
            }
        }
        total = total.add(g);
    }
    Ok(total)
}

/// One observed entry `(row, col, value)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry<T> {
    pub row: usize,
    pub col: usize,
    pub value: T,
}

/// Observed entries of a nominal `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMask<T> {
    rows: usize,
    cols: usize,
    entries: Vec<Entry<T>>,
}

impl<T: Real> ObservationMask<T> {
    /// Validates ranges, finiteness and uniqueness of `(row, col)` pairs.
    pub fn new(rows: usize, cols: usize, entries: Vec<Entry<T>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.row >= rows || e.col >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) outside a {rows}x{cols} matrix",
                    e.row, e.col
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) is not finite",
                    e.row, e.col
                )));
            }
            if !seen.insert((e.row, e.col)) {
                return Err(Error::DuplicateEntry {
                    row: e.row,
                    col: e.col,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            triplets
                .iter()
                .map(|&(row, col, value)| Entry { row, col, value })
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    /// `A_ij − (UV)_ij` for every observed entry, in storage order.
    pub fn residuals(&self, u: ArrayView2<T>, v: ArrayView2<T>) -> Vec<T> {
        self.entries
            .iter()
            .map(|e| {
                let pred = u
                    .row(e.row)
                    .iter()
                    .zip(v.column(e.col).iter())
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                e.value - pred
            })
            .collect()
    }

    /// `‖P(A − UV)‖²`.
    pub fn residual_norm_sq(&self, u: ArrayView2<T>, v: ArrayView2<T>) -> T {
        self.residuals(u, v).iter().fold(T::zero(), |acc, &r| acc + r * r)
    }

    /// Dense `P(A)`.
    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for e in &self.entries {
            out[[e.row, e.col]] = e.value;
        }
        out
    }

    /// `P(A)·w` for a dense `cols × k` matrix `w`.
    pub fn mul_dense(&self, w: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.rows, w.ncols()));
        for e in &self.entries {
            let src = w.row(e.col);
            let mut dst = out.row_mut(e.row);
            dst.scaled_add(e.value, &src);
        }
        out
    }

    /// `P(A)ᵀ·w` for a dense `rows × k` matrix `w`.
    pub fn tmul_dense(&self, w: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.cols, w.ncols()));
        for e in &self.entries {
            let src = w.row(e.row);
            let mut dst = out.row_mut(e.col);
            dst.scaled_add(e.value, &src);
        }
        out
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries.iter().any(|e| e.row == row && e.col == col)
    }
}
