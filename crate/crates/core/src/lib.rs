//! Numerics for the Bogoliubov–Hartree–Fock energy functional of the
//! zero-total-momentum Pauli–Fierz fiber.
//!
//! The photon momentum shell is discretized by an antipodally symmetric
//! product quadrature ([`grid`]). Every vector and operator is stored in
//! orthonormal coordinates (each entry carries the square root of its
//! quadrature weight), so inner products, traces and operator functions reduce
//! to plain dense linear algebra ([`operator`]).
//!
//! On top of that sit the convex functional `G` and the full functional `E`
//! ([`functional`]), the closed-form partial minimizers and the block
//! coordinate descent solver ([`solver`]), randomized and constructive checks
//! of the operator inequalities and of the (non-)convexity statements
//! ([`verify`]), and the cutoff sweep with its power-law fit ([`sweep`]).

pub mod error;
pub mod functional;
pub mod grid;
pub mod operator;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};
pub use functional::{
    e_full, g_energy, grad_eta, grad_z, scaling_identity_check, EnergyBreakdown, Normalization, ScalingReport,
    TermWeights,
};
pub use grid::{apply_j, conjugate_by_j, coupling_vectors, CoeffVector, GridConfig, MomentumGrid};
pub use operator::{projector_p, psd_sqrt, resolvent, trace_root_gap, SpectralFactorization, SymOperator};
pub use scalar::Scalar;
pub use solver::{
    eta_star, minimize, minimize_from, reduced_energy, stationarity_residual, z_star, MinimizeResult, SolveConfig,
    UpdateOrder,
};
pub use sweep::{fit_power_law, fit_upper_half, run_sweep, FitResult, SweepConfig, SweepRecord};
pub use verify::{CounterexampleReport, PropertyReport};
