//! Markov-modulated fluid queues: first-return matrices, their first-order
//! sensitivity to generator and rate perturbations, stationary densities,
//! and a Monte Carlo oracle.
//!
//! Phases are split by the sign of their fluid rate into `S₊`, `S₀` and
//! `S₋`. Matrices returned by the solvers use the canonical order
//! `S₊, S₀, S₋` (see [`model::FluidModel`]); everything user-facing carries
//! original phase indices.

pub mod bench;
pub mod density;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    censor_zero_phases, mean_drift, stationary_phase_dist, validate_model, CensoredBlocks,
    FluidModel, Side,
};
pub use numerics::Matrix;
pub use perturb::{expand, PerturbationSpec, PsiExpansion, Regime};
pub use riccati::{build_uk, solve_psi, solve_psi_at, NewtonOptions, PsiSolution};
