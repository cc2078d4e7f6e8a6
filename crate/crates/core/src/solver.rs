//! Closed-form partial minimizers and the alternating solver.
//!
//! At fixed `η` the unique minimizer in `z` solves `(1+z)|k|(1+z) = l P_η + |k|`,
//! at fixed `z` the minimizer in `η` solves the linear system `T η = −ψ`.
//! Alternating the two exact block minimizations from `(0, 0)` decreases the
//! energy monotonically; the first `η`-first iterate is the trial state
//! `(z_*(0), 0)`.

use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{g_energy, EnergyBreakdown, EtaQuadratic, Normalization, TermWeights};
use crate::grid::{apply_j, conjugate_by_j, CoeffVector, MomentumGrid};
use crate::operator::{projector_p, psd_sqrt, SymOperator};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    EtaFirst,
    ZFirst,
}

impl FromStr for UpdateOrder {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eta_first" | "eta-first" => Ok(Self::EtaFirst),
            "z_first" | "z-first" => Ok(Self::ZFirst),
            other => Err(format!("unknown update order {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Stop once the relative energy decrease of one sweep falls below this.
    pub tol_energy_rel: f64,
    /// Threshold for the reported `stationary` flag; never used to stop.
    pub tol_stationarity: f64,
    pub max_iters: usize,
    pub order: UpdateOrder,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { tol_energy_rel: 1e-10, tol_stationarity: 1e-8, max_iters: 200, order: UpdateOrder::EtaFirst }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_energy_rel > 0.0) || !(self.tol_stationarity > 0.0) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult<T: Scalar = f64> {
    pub z: SymOperator<T>,
    pub eta: CoeffVector<T>,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    /// Energy at the starting point followed by the energy after each sweep.
    pub energy_trajectory: Vec<f64>,
    pub stationarity_z: f64,
    pub stationarity_eta: f64,
    pub j_invariance_defect: f64,
    /// The energy criterion was met within `max_iters`.
    pub converged: bool,
    /// Both stationarity residuals are below `tol_stationarity`.
    pub stationary: bool,
}

/// Serializable view of a [`MinimizeResult`] without the dense iterates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizeSummary {
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub energy_trajectory: Vec<f64>,
    pub stationarity_z: f64,
    pub stationarity_eta: f64,
    pub j_invariance_defect: f64,
    pub converged: bool,
    pub stationary: bool,
    pub z_trace: f64,
    pub z_hs_norm: f64,
    pub eta_norm: f64,
}

impl<T: Scalar> MinimizeResult<T> {
    pub fn summary(&self) -> MinimizeSummary {
        MinimizeSummary {
            energy: self.energy.clone(),
            iterations: self.iterations,
            energy_trajectory: self.energy_trajectory.clone(),
            stationarity_z: self.stationarity_z,
            stationarity_eta: self.stationarity_eta,
            j_invariance_defect: self.j_invariance_defect,
            converged: self.converged,
            stationary: self.stationary,
            z_trace: self.z.trace(),
            z_hs_norm: self.z.hs_norm(),
            eta_norm: self.eta.norm(),
        }
    }
}

/// `D^{-1} (D (LP + |k|) D)^{1/2} D^{-1} − 1` with `D = |k|^{1/2}`, where
/// `scaled_projector` is `LP` already multiplied by its coupling weight.
pub fn z_star_from_parts<T: Scalar>(abs_k: &DVector<f64>, scaled_projector: &SymOperator<T>) -> Result<SymOperator<T>> {
    if abs_k.len() != scaled_projector.dim() {
        return Err(Error::DimensionMismatch { expected: scaled_projector.dim(), found: abs_k.len() });
    }
    if abs_k.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidConfig("|k| must be strictly positive on every node".into()));
    }
    let d = abs_k.map(f64::sqrt);
    let k2 = abs_k.map(|k| k * k);
    let inner = &scaled_projector.congruence_diag(&d) + &SymOperator::from_real_diagonal(&k2);
    let root = psd_sqrt(&inner)?;
    Ok(root.congruence_diag(&d.map(|x| 1.0 / x)).shift(-1.0))
}

/// Minimizer of `G(·, η)`. Independent of the normalization.
pub fn z_star<T: Scalar>(grid: &MomentumGrid, eta: &CoeffVector<T>) -> Result<SymOperator<T>> {
    let p = projector_p(grid, eta, grid.config().g)?;
    z_star_from_parts(grid.abs_k(), &p.scale(grid.lambda_factor()))
}

/// Minimizer of `G(z, ·)`. Independent of the normalization.
pub fn eta_star<T: Scalar>(grid: &MomentumGrid, z: &SymOperator<T>) -> Result<CoeffVector<T>> {
    EtaQuadratic::new(grid, z, Normalization::Body)?.minimizer()
}

/// `G(z_*(η), η)` in closed form:
/// `2 w_field Tr[(l D P_η D + |k|²)^{1/2} − |k|] + w_weyl ⟨η, |k| η⟩`.
pub fn reduced_energy<T: Scalar>(
    grid: &MomentumGrid,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<f64> {
    let w = TermWeights::for_grid(grid, normalization);
    let p = projector_p(grid, eta, grid.config().g)?;
    let d = grid.abs_k().map(f64::sqrt);
    let k2 = grid.abs_k().map(|k| k * k);
    let inner = &p.scale(grid.lambda_factor()).congruence_diag(&d) + &SymOperator::from_real_diagonal(&k2);
    let root_trace = psd_sqrt(&inner)?.trace();
    let weyl: f64 = eta.iter().zip(grid.abs_k().iter()).map(|(x, &k)| k * x.modulus_squared()).sum();
    Ok(2.0 * w.field_trace * (root_trace - grid.abs_k().sum()) + w.weyl * weyl)
}

/// Largest eigenvalue of a positive semidefinite operator by power iteration.
fn top_eigenvalue<T: Scalar>(m: &SymOperator<T>) -> f64 {
    let n = m.dim();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| T::from_real(1.0 + (i % 7) as f64 * 0.1));
    let mut lambda = 0.0;
    for _ in 0..60 {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v.unscale_mut(norm);
        let w = m.apply(&v);
        lambda = v.dotc(&w).real();
        v = w;
    }
    lambda.abs()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// Scaled residuals of the two stationarity equations:
/// `‖(1+z)|k|(1+z) − lP_η − |k|‖ / ‖lP_η + |k|‖` and
/// `‖Tη + ψ‖ / (|ψ| + ‖T‖‖η‖)`, where `|ψ|` sums the polarization terms in modulus.
pub fn stationarity_residual<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<(f64, f64)> {
    grid.check_operator(z)?;
    let n = grid.dim();
    let lp = projector_p(grid, eta, grid.config().g)?.scale(grid.lambda_factor());
    let target = &lp + &SymOperator::from_real_diagonal(grid.abs_k());
    let one_z = z.shift(1.0);
    let sqrt_k = grid.abs_k().map(f64::sqrt);
    let a = DMatrix::from_fn(n, n, |i, j| one_z.matrix()[(i, j)].scale(sqrt_k[j]));
    let lhs = SymOperator::from_matrix(&a * a.adjoint());
    let res_z = ratio((&lhs - &target).hs_norm(), target.hs_norm());

    let q = EtaQuadratic::new(grid, z, normalization)?;
    let res_eta = ratio(q.residual(eta).norm(), q.psi_scale + top_eigenvalue(&q.t) * eta.norm());
    Ok((res_z, res_eta))
}

/// `max(‖JzJ − z‖/‖z‖, ‖Jη − η‖/max(‖η‖, 1))`.
pub fn j_invariance_defect<T: Scalar>(grid: &MomentumGrid, z: &SymOperator<T>, eta: &CoeffVector<T>) -> Result<f64> {
    let dz = (&conjugate_by_j(grid, z)? - z).hs_norm();
    let de = (apply_j(grid, eta)? - eta).norm();
    Ok(ratio(dz, z.hs_norm()).max(de / eta.norm().max(1.0)))
}

/// Alternating minimization from `(0, 0)`.
pub fn minimize(grid: &MomentumGrid, config: &SolveConfig, normalization: Normalization) -> Result<MinimizeResult> {
    let n = grid.dim();
    minimize_from(grid, SymOperator::zeros(n), DVector::zeros(n), config, normalization)
}

/// Alternating minimization from an arbitrary feasible start.
pub fn minimize_from<T: Scalar>(
    grid: &MomentumGrid,
    z0: SymOperator<T>,
    eta0: CoeffVector<T>,
    config: &SolveConfig,
    normalization: Normalization,
) -> Result<MinimizeResult<T>> {
    config.validate()?;
    grid.check_operator(&z0)?;
    grid.check_vector(&eta0)?;
    let n = grid.dim();

    if grid.config().g == 0.0 {
        // Free field: (0, 0) is the exact minimizer, reached by the first
        // sweep and confirmed by the second.
        let z = SymOperator::zeros(n);
        let eta = DVector::zeros(n);
        let start = g_energy(grid, &z0, &eta0, normalization)?.total;
        let energy = g_energy(grid, &z, &eta, normalization)?;
        return Ok(MinimizeResult {
            energy_trajectory: vec![start, energy.total, energy.total],
            z,
            eta,
            energy,
            iterations: 2,
            stationarity_z: 0.0,
            stationarity_eta: 0.0,
            j_invariance_defect: 0.0,
            converged: true,
            stationary: true,
        });
    }

    let mut z = z0;
    let mut eta = eta0;
    let mut energy = g_energy(grid, &z, &eta, normalization)?;
    let mut trajectory = vec![energy.total];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        match config.order {
            UpdateOrder::EtaFirst => {
                eta = eta_star(grid, &z)?;
                z = z_star(grid, &eta)?;
            }
            UpdateOrder::ZFirst => {
                z = z_star(grid, &eta)?;
                eta = eta_star(grid, &z)?;
            }
        }
        let next = g_energy(grid, &z, &eta, normalization)?;
        if !next.total.is_finite() {
            return Err(Error::LinearSolveFailure(format!("non-finite energy at iteration {iterations}")));
        }
        let decrease = energy.total - next.total;
        debug!("iteration {iterations}: energy {:.15e} (decrease {decrease:.3e})", next.total);
        trajectory.push(next.total);
        energy = next;
        if decrease <= config.tol_energy_rel * energy.total.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("alternating minimization hit max_iters = {} before converging", config.max_iters);
    }

    let (stationarity_z, stationarity_eta) = stationarity_residual(grid, &z, &eta, normalization)?;
    let j_defect = j_invariance_defect(grid, &z, &eta)?;
    Ok(MinimizeResult {
        z,
        eta,
        energy,
        iterations,
        energy_trajectory: trajectory,
        stationarity_z,
        stationarity_eta,
        j_invariance_defect: j_defect,
        converged,
        stationary: stationarity_z <= config.tol_stationarity && stationarity_eta <= config.tol_stationarity,
    })
}

/// Largest relative increase between consecutive trajectory entries
/// (non-positive for a monotone trajectory).
pub fn worst_ascent(trajectory: &[f64]) -> f64 {
    trajectory.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max)
}
