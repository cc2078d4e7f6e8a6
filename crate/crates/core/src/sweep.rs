//! Cutoff sweeps: one minimization per `Λ`, bound constants, and the
//! power-law fit of the minimal energy.

use std::io::Write;
use std::time::Instant;

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Normalization;
use crate::grid::{GridConfig, MomentumGrid};
use crate::solver::{minimize, reduced_energy, SolveConfig};

/// Lower constant `4√(π/3)` of the energy estimate.
pub fn lower_constant() -> f64 {
    4.0 * (std::f64::consts::PI / 3.0).sqrt()
}

/// Upper constant `4√(3π)` as stated with the energy estimate.
pub fn stated_upper_constant() -> f64 {
    4.0 * (3.0 * std::f64::consts::PI).sqrt()
}

/// `8√π`, the large-`Λ` limit of the trial-state energy over `g Λ^{3/2}`.
pub fn derived_upper_constant() -> f64 {
    8.0 * std::f64::consts::PI.sqrt()
}

pub const CSV_HEADER: [&str; 11] = [
    "lambda",
    "g",
    "sigma",
    "n",
    "e_min",
    "e_trial",
    "lower_bound",
    "paper_upper",
    "derived_upper",
    "iters",
    "wall_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub g: f64,
    pub sigma: f64,
    pub dims: (usize, usize, usize),
    pub normalization: Normalization,
    pub solve: SolveConfig,
    /// Relative slack on the lower bound when flagging records.
    pub fit_tolerance: f64,
    /// Cap on concurrent records; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Forces sequential execution.
    pub deterministic: bool,
    /// Rejects `Λ` values at or below `3/(8π g²)`, where the estimate is not claimed.
    pub enforce_bounds: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![8.0, 16.0, 32.0, 64.0, 128.0],
            g: 1.0,
            sigma: 0.1,
            dims: (8, 8, 8),
            normalization: Normalization::Body,
            solve: SolveConfig::default(),
            fit_tolerance: 0.02,
            jobs: None,
            deterministic: false,
            enforce_bounds: false,
        }
    }
}

/// Smallest `Λ` for which the energy estimate is claimed.
pub fn bound_threshold(g: f64) -> f64 {
    3.0 / (8.0 * std::f64::consts::PI * g * g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub g: f64,
    pub sigma: f64,
    pub dims: (usize, usize, usize),
    pub n: usize,
    pub e_min: f64,
    pub e_trial: f64,
    pub lower_bound: f64,
    pub paper_upper: f64,
    pub derived_upper: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub converged: bool,
    /// `Λ > 3/(8π g²)`.
    pub bounds_apply: bool,
    /// `E_min ≥ lower_bound (1 − fit_tolerance)`, or the bound does not apply.
    pub lower_ok: bool,
    /// `E_trial ≤ 1.05 derived_upper`.
    pub trial_ok: bool,
}

impl SweepRecord {
    /// `E_min / (g Λ^{3/2})`.
    pub fn min_ratio(&self) -> f64 {
        self.e_min / (self.g * self.lambda.powf(1.5))
    }

    /// `E_trial / (g Λ^{3/2})`.
    pub fn trial_ratio(&self) -> f64 {
        self.e_trial / (self.g * self.lambda.powf(1.5))
    }

    pub fn flagged(&self) -> bool {
        !(self.lower_ok && self.trial_ok)
    }
}

fn run_one(config: &SweepConfig, lambda: f64) -> Result<SweepRecord> {
    let grid_config = GridConfig {
        lambda,
        sigma: config.sigma,
        g: config.g,
        n_radial: config.dims.0,
        n_polar: config.dims.1,
        n_azimuth: config.dims.2,
        normalization: config.normalization,
    };
    let start = Instant::now();
    let grid = MomentumGrid::build(&grid_config)?;
    let result = minimize(&grid, &config.solve, config.normalization)?;
    let e_trial = reduced_energy(&grid, &DVector::<f64>::zeros(grid.dim()), config.normalization)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    // The constants belong to the body normalization.
    let factor = match config.normalization {
        Normalization::Body => 1.0,
        Normalization::Intro => 0.25,
    };
    let unit = factor * config.g * lambda.powf(1.5);
    let lower_bound = lower_constant() * unit;
    let derived_upper = derived_upper_constant() * unit;
    let bounds_apply = lambda > bound_threshold(config.g);
    let e_min = result.energy.total;
    info!("lambda = {lambda}: e_min = {e_min:.6e}, e_trial = {e_trial:.6e}, {} iterations", result.iterations);
    Ok(SweepRecord {
        lambda,
        g: config.g,
        sigma: config.sigma,
        dims: config.dims,
        n: grid.dim(),
        e_min,
        e_trial,
        lower_bound,
        paper_upper: stated_upper_constant() * unit,
        derived_upper,
        iterations: result.iterations,
        wall_ms,
        converged: result.converged,
        bounds_apply,
        lower_ok: !bounds_apply || e_min >= lower_bound * (1.0 - config.fit_tolerance),
        trial_ok: e_trial <= derived_upper * 1.05,
    })
}

/// Runs one minimization per `Λ`. Records come back sorted by `Λ` whatever
/// the execution order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    if config.lambdas.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least two lambda values".into()));
    }
    if config.enforce_bounds {
        let threshold = bound_threshold(config.g);
        if let Some(bad) = config.lambdas.iter().find(|&&l| !(l > threshold)) {
            return Err(Error::InvalidConfig(format!("lambda = {bad} is not above 3/(8 pi g^2) = {threshold:.4}")));
        }
    }
    let mut lambdas = config.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();

    let records: Result<Vec<SweepRecord>> = if config.deterministic || config.jobs == Some(1) {
        lambdas.iter().map(|&l| run_one(config, l)).collect()
    } else if let Some(jobs) = config.jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
        pool.install(|| lambdas.par_iter().map(|&l| run_one(config, l)).collect())
    } else {
        lambdas.par_iter().map(|&l| run_one(config, l)).collect()
    };
    records
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Slope of `log E` against `log Λ`.
    pub exponent: f64,
    /// `exp(intercept)`.
    pub prefactor: f64,
    pub r_squared: f64,
    pub lambda_range: (f64, f64),
    pub points: usize,
}

/// Least-squares line through `(log Λ, log E)`; needs at least four points.
pub fn fit_power_law(lambdas: &[f64], energies: &[f64]) -> Result<FitResult> {
    if lambdas.len() != energies.len() {
        return Err(Error::DimensionMismatch { expected: lambdas.len(), found: energies.len() });
    }
    if lambdas.len() < 4 {
        return Err(Error::InvalidConfig(format!("power-law fit needs at least 4 points, got {}", lambdas.len())));
    }
    if lambdas.iter().chain(energies).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidConfig("power-law fit needs positive data".into()));
    }
    let x: Vec<f64> = lambdas.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = energies.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("power-law fit needs distinct lambda values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FitResult {
        exponent: slope,
        prefactor: intercept.exp(),
        r_squared,
        lambda_range: (lo, hi),
        points: lambdas.len(),
    })
}

/// Fit over the upper half of the `Λ` range, widened to four points when the
/// sweep has them.
pub fn fit_upper_half(records: &[SweepRecord]) -> Result<FitResult> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let take = sorted.len().div_ceil(2).max(4).min(sorted.len());
    let window = &sorted[sorted.len() - take..];
    let lambdas: Vec<f64> = window.iter().map(|r| r.lambda).collect();
    let energies: Vec<f64> = window.iter().map(|r| r.e_min).collect();
    fit_power_law(&lambdas, &energies)
}

/// Writes records as CSV with the fixed header, ordered by `Λ`.
pub fn write_csv(records: &[SweepRecord], out: impl Write) -> Result<()> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in sorted {
        w.write_record([
            r.lambda.to_string(),
            r.g.to_string(),
            r.sigma.to_string(),
            r.n.to_string(),
            format!("{:.12e}", r.e_min),
            format!("{:.12e}", r.e_trial),
            format!("{:.12e}", r.lower_bound),
            format!("{:.12e}", r.paper_upper),
            format!("{:.12e}", r.derived_upper),
            r.iterations.to_string(),
            format!("{:.1}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
