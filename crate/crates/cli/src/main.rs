//! `bhf`: minimization runs, cutoff sweeps, property checks and the
//! non-convexity construction from the command line.
//!
//! Exit codes: 0 success, 1 configuration or domain error, 2 solver did not
//! converge, 3 a verification came out wrong.

mod args;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bhf_core::sweep::{fit_upper_half, write_csv};
use bhf_core::verify::{
    build_counterexample, trace_monotone_limit, trace_upper_limit, verify_aba, verify_coercivity, verify_convexity,
    verify_inverse_convexity, verify_root_monotone, verify_shift_monotone, verify_trace_monotone, verify_trace_upper,
    ConvexityTarget,
};
use bhf_core::{minimize, run_sweep, scaling_identity_check, GridConfig, MomentumGrid, PropertyReport, SweepConfig};
use clap::{Parser, Subcommand};
use log::warn;
use nalgebra::DVector;
use serde_json::json;

use args::{Format, GridArgs, SolveArgs};

#[derive(Parser, Debug)]
#[command(name = "bhf", version, about = "Bogoliubov-Hartree-Fock energy numerics on a discretized momentum shell")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimize the reduced functional at one cutoff.
    Minimize {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Write the minimizing `z` (JSON if the path ends in `.json`, binary otherwise).
        #[arg(long, value_name = "PATH")]
        dump_operator: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// One minimization per cutoff, with bound constants and an optional power-law fit.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Fit `E_min ~ Λ^p` over the upper half of the cutoff range.
        #[arg(long)]
        fit: bool,
        /// Reject cutoffs outside the range of the energy estimate and fail on flagged records.
        #[arg(long)]
        enforce_bounds: bool,
        /// Relative slack on the lower bound.
        #[arg(long, default_value_t = 0.02)]
        fit_tolerance: f64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Rank-two construction showing the full functional is not convex.
    Counterexample {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Randomized inequality, convexity and coercivity suites.
    Verify {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Dilation identity between the rescaled and the physical grid.
    Scalecheck {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Dump the grid nodes, weights and polarization vectors as JSON.
    Grid {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Grid defaults for the commands that evaluate many dense functionals.
fn small_grid_defaults(grid: &GridArgs) -> GridArgs {
    let mut g = grid.clone();
    if g.config.is_none() {
        g.lambda.get_or_insert_with(|| "4".into());
        g.nr.get_or_insert(2);
        g.ntheta.get_or_insert(4);
        g.nphi.get_or_insert(4);
    }
    g
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Minimize { grid, solve, dump_operator, format, out } => {
            let config = grid.single()?;
            let solve = solve.config()?;
            let mesh = MomentumGrid::build(&config)?;
            let result = minimize(&mesh, &solve, config.normalization)?;
            if let Some(path) = &dump_operator {
                let mut file =
                    BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
                if path.extension().is_some_and(|e| e == "json") {
                    serde_json::to_writer(&mut file, &result.z.to_json())?;
                } else {
                    result.z.write_binary(&mut file)?;
                }
                file.flush()?;
            }
            match format {
                Format::Json => write_json(
                    out.as_deref(),
                    &json!({ "config": config, "solve": solve, "result": result.summary() }),
                )?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(open_out(out.as_deref())?);
                    w.write_record(["iteration", "energy"])?;
                    for (i, e) in result.energy_trajectory.iter().enumerate() {
                        w.write_record([i.to_string(), format!("{e:.15e}")])?;
                    }
                    w.flush()?;
                }
            }
            if !result.converged {
                warn!("not converged after {} iterations", result.iterations);
                return Ok(EXIT_NOT_CONVERGED);
            }
            Ok(0)
        }
        Command::Sweep { grid, solve, fit, enforce_bounds, fit_tolerance, jobs, deterministic, format, out } => {
            let (base, lambdas) = grid.sweep()?;
            let config = SweepConfig {
                lambdas,
                g: base.g,
                sigma: base.sigma,
                dims: (base.n_radial, base.n_polar, base.n_azimuth),
                normalization: base.normalization,
                solve: solve.config()?,
                fit_tolerance,
                jobs,
                deterministic,
                enforce_bounds,
            };
            let records = run_sweep(&config)?;
            let fit = if fit { Some(fit_upper_half(&records)?) } else { None };
            for r in records.iter().filter(|r| r.flagged()) {
                warn!(
                    "lambda = {}: e_min/(g L^1.5) = {:.4}, e_trial/(g L^1.5) = {:.4} outside the expected range",
                    r.lambda,
                    r.min_ratio(),
                    r.trial_ratio()
                );
            }
            match format {
                Format::Csv => {
                    let mut w = open_out(out.as_deref())?;
                    write_csv(&records, &mut w)?;
                    if let Some(f) = &fit {
                        writeln!(
                            w,
                            "# fit exponent={} prefactor={} r_squared={} lambda_min={} lambda_max={} points={}",
                            f.exponent, f.prefactor, f.r_squared, f.lambda_range.0, f.lambda_range.1, f.points
                        )?;
                    }
                    w.flush()?;
                }
                Format::Json => {
                    write_json(out.as_deref(), &json!({ "config": config, "records": records, "fit": fit }))?
                }
            }
            if records.iter().any(|r| !r.converged) {
                return Ok(EXIT_NOT_CONVERGED);
            }
            if enforce_bounds && records.iter().any(|r| r.flagged()) {
                return Ok(EXIT_VERIFY);
            }
            Ok(0)
        }
        Command::Counterexample { grid, out } => {
            let config = grid.single()?;
            let mesh = MomentumGrid::build(&config)?;
            let report = build_counterexample(&mesh, &DVector::zeros(mesh.dim()))?;
            write_json(out.as_deref(), &serde_json::to_value(&report)?)?;
            Ok(if report.exhibits_nonconvexity() { 0 } else { EXIT_VERIFY })
        }
        Command::Verify { grid, trials, seed, out } => {
            let config = small_grid_defaults(&grid).single()?;
            let mesh = MomentumGrid::build(&config)?;
            let mut reports: Vec<PropertyReport> = Vec::new();
            for dim in [4, 8, 16, 32] {
                for mut r in [verify_trace_upper(dim, trials, seed), verify_trace_monotone(dim, trials, seed)] {
                    r.property_name = format!("{}_dim{dim}", r.property_name);
                    reports.push(r);
                }
            }
            reports.push(verify_shift_monotone(8, trials, seed, 0.1));
            reports.push(verify_inverse_convexity(8, trials, seed));
            reports.push(verify_aba(8, trials, seed));
            reports.push(verify_root_monotone(8, trials, seed));
            for which in [ConvexityTarget::G, ConvexityTarget::Interaction, ConvexityTarget::E] {
                reports.push(verify_convexity(&mesh, trials, seed, which));
            }
            reports.push(verify_coercivity(&mesh, trials, seed));
            let limits = json!({
                "trace_upper_at_b_zero": trace_upper_limit(16, seed, 0.0),
                "trace_monotone_at_c_equal_b": trace_monotone_limit(16, seed, 0.0),
            });
            let unexpected: Vec<&str> =
                reports.iter().filter(|r| r.is_unexpected()).map(|r| r.property_name.as_str()).collect();
            write_json(
                out.as_deref(),
                &json!({ "config": config, "reports": reports, "equality_limits": limits, "unexpected": unexpected }),
            )?;
            Ok(if unexpected.is_empty() { 0 } else { EXIT_VERIFY })
        }
        Command::Scalecheck { grid, seed, out } => {
            let config = grid.single()?;
            let report = scaling_identity_check(&config, seed)?;
            write_json(out.as_deref(), &serde_json::to_value(&report)?)?;
            let ok = report.max_relative_deviation <= 1e-10 && report.unitarity_defect <= 1e-10;
            Ok(if ok { 0 } else { EXIT_VERIFY })
        }
        Command::Grid { grid, out } => {
            let config: GridConfig = grid.single()?;
            let mesh = MomentumGrid::build(&config)?;
            write_json(out.as_deref(), &mesh.to_json())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
