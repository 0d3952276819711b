//! Spin-selective radical-pair reaction kinetics.
//!
//! Two kinetic models are implemented side by side on the same spin system:
//! the conventional phenomenological (Haberkorn) master equation, whose
//! reaction terms are anticommutators with the singlet and triplet
//! projectors, and the quantum-measurement master equation, in which each
//! reaction channel acts as a projective measurement in the singlet/triplet
//! basis. Both are propagated in Liouville space with a row-stacking
//! vectorization, so that `vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ)`.
//!
//! Besides deterministic propagation the crate provides a stochastic
//! quantum-jump unraveling of either model (used as an independent oracle),
//! Zeno-limit rate fits, and the sweep over `k_T` vs time that compares the
//! two models across the oscillatory, overdamped and Zeno regimes.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod evolve;
pub mod linalg;
pub mod spinsys;
pub mod superop;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, ComplexVector};
pub use spinsys::{RateConstants, SpinSystem};
pub use superop::{Approach, Superoperator, SuperoperatorKind};
