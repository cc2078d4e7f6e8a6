//! Randomized and constructive checks of the operator inequalities, the
//! convexity and coercivity statements, and the rank-two non-convexity
//! construction.
//!
//! Every suite draws trial `i` from the ChaCha8 stream `i` of its seed, so a
//! report is reproducible and independent of how trials are scheduled.

mod convexity;
mod counterexample;
mod inequalities;

pub use convexity::{random_feasible_pair, verify_coercivity, verify_convexity, ConvexityTarget};
pub use counterexample::{
    build_counterexample, closed_form_hessian, rank_two_energy, CounterexampleReport, HessianCheck, MidpointTriple,
    RankTwoCoefficients,
};
pub use inequalities::{
    inverse_convexity_gap, printed_shift_margin, trace_monotone_limit, trace_upper_limit, verify_aba,
    verify_inverse_convexity, verify_root_monotone, verify_shift_monotone, verify_trace_monotone, verify_trace_upper,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::operator::SymOperator;

/// Outcome of one randomized property suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property_name: String,
    pub trials: usize,
    /// Trials whose normalized margin fell below `-tolerance`.
    pub violations: usize,
    /// Smallest normalized margin observed (non-negative when the property holds).
    pub worst_margin: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// `false` for suites that are supposed to find violations.
    pub expect_clean: bool,
}

impl PropertyReport {
    /// Violations where none are expected, or none where some are.
    pub fn is_unexpected(&self) -> bool {
        if self.expect_clean {
            self.violations > 0
        } else {
            self.violations == 0
        }
    }
}

/// Deterministic generator for trial `trial` of a suite seeded with `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs `trial` for every index and folds the margins into a report.
/// Each trial returns its worst normalized margin.
pub(crate) fn run_trials(
    name: &str,
    trials: usize,
    seed: u64,
    tolerance: f64,
    expect_clean: bool,
    trial: impl Fn(&mut ChaCha8Rng, usize) -> f64 + Sync,
) -> PropertyReport {
    let margins: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            trial(&mut rng, i)
        })
        .collect();
    PropertyReport {
        property_name: name.to_string(),
        trials,
        violations: margins.iter().filter(|&&m| !(m >= -tolerance)).count(),
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        seed,
        tolerance,
        expect_clean,
    }
}

pub(crate) fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// column signs fixed so the distribution is Haar.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// `Q diag(λ) Qᵀ` with the given spectrum.
pub fn with_spectrum(rng: &mut ChaCha8Rng, eigenvalues: &[f64]) -> SymOperator {
    let n = eigenvalues.len();
    let q = random_orthogonal(rng, n);
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col.scale_mut(eigenvalues[j]);
    }
    SymOperator::from_matrix(scaled * q.transpose())
}

/// Eigenvalue drawn log-uniformly from `[lo, hi]`.
pub(crate) fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Positive definite operator with eigenvalues log-uniform on `[1e-3, 10]`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymOperator {
    let spectrum: Vec<f64> = (0..n).map(|_| log_uniform(rng, 1e-3, 10.0)).collect();
    with_spectrum(rng, &spectrum)
}
