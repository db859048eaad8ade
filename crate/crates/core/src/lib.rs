//! Inertial block majorization-minimization.
//!
//! The crate provides block iterates and the problem abstraction
//! `F = f + Σ g_i`, five families of block surrogates, inertial extrapolation
//! operators with their step-constant calculus, the cyclic and essentially
//! cyclic block solver with restart and decrease monitors, and two complete
//! applications: sparse nonnegative matrix factorization and matrix completion
//! with an exponential regularizer.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the `F64`
//! aliases below cover the common case.

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod block;
pub mod error;
pub mod experiment;
pub mod extrapolation;
pub mod io;
pub mod numerics;
pub mod scalar;
pub mod solver;
pub mod surrogate;
pub mod verify;

pub use block::{block_axpy, objective_value, BlockVector, Entry, ObservationMask, Objective, Problem};
pub use error::{Error, Result};
pub use scalar::Real;

pub type BlockVectorF64 = BlockVector<f64>;
pub type BlockVectorF32 = BlockVector<f32>;
pub type ObservationMaskF64 = ObservationMask<f64>;
pub type ObservationMaskF32 = ObservationMask<f32>;
