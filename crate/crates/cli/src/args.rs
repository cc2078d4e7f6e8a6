use std::path::PathBuf;

use anyhow::{bail, Context};
use bhf_core::{GridConfig, Normalization, SolveConfig, UpdateOrder};
use clap::{Args, ValueEnum};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Grid and coupling flags shared by every subcommand. Flags override values
/// read from `--config`, which override the built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Plain-text `key = value` grid config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Cutoff: a value, a comma list, or `start:stop:factor`.
    #[arg(long, value_name = "SPEC")]
    pub lambda: Option<String>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Radial nodes.
    #[arg(long)]
    pub nr: Option<usize>,
    /// Polar nodes (even).
    #[arg(long)]
    pub ntheta: Option<usize>,
    /// Azimuthal nodes (even, at least 4).
    #[arg(long)]
    pub nphi: Option<usize>,
    #[arg(long, value_parser = parse_normalization)]
    pub normalization: Option<Normalization>,
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    s.parse()
}

impl GridArgs {
    /// The base config with every explicit flag applied; `lambda` is left at
    /// the file/default value when `--lambda` is absent.
    fn base(&self) -> anyhow::Result<GridConfig> {
        let mut c = match &self.config {
            Some(path) => GridConfig::from_kv_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => GridConfig::default(),
        };
        if let Some(v) = self.g {
            c.g = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.nr {
            c.n_radial = v;
        }
        if let Some(v) = self.ntheta {
            c.n_polar = v;
        }
        if let Some(v) = self.nphi {
            c.n_azimuth = v;
        }
        if let Some(v) = self.normalization {
            c.normalization = v;
        }
        Ok(c)
    }

    /// Config for commands that take a single cutoff.
    pub fn single(&self) -> anyhow::Result<GridConfig> {
        let mut c = self.base()?;
        if let Some(spec) = &self.lambda {
            match parse_lambdas(spec)?.as_slice() {
                [one] => c.lambda = *one,
                many => bail!("expected a single lambda, got {} values", many.len()),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Base config plus the list of cutoffs for a sweep.
    pub fn sweep(&self) -> anyhow::Result<(GridConfig, Vec<f64>)> {
        let c = self.base()?;
        let lambdas = match &self.lambda {
            Some(spec) => parse_lambdas(spec)?,
            None => vec![8.0, 16.0, 32.0, 64.0, 128.0],
        };
        for &l in &lambdas {
            GridConfig { lambda: l, ..c.clone() }.validate()?;
        }
        Ok((c, lambdas))
    }
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Relative energy decrease per sweep below which the solver stops.
    #[arg(long, default_value_t = SolveConfig::default().tol_energy_rel)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = SolveConfig::default().max_iters)]
    pub max_iter: usize,
    /// Update `z` before `η` in each sweep.
    #[arg(long)]
    pub z_first: bool,
}

impl SolveArgs {
    pub fn config(&self) -> anyhow::Result<SolveConfig> {
        let c = SolveConfig {
            tol_energy_rel: self.tol,
            max_iters: self.max_iter,
            order: if self.z_first { UpdateOrder::ZFirst } else { UpdateOrder::EtaFirst },
            ..SolveConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

/// `16`, `8,16,32` or `8:128:2` (geometric, both ends inclusive).
pub fn parse_lambdas(spec: &str) -> anyhow::Result<Vec<f64>> {
    let num = |s: &str| -> anyhow::Result<f64> {
        let v: f64 = s.trim().parse().with_context(|| format!("cannot parse {s:?} as a number"))?;
        if !v.is_finite() {
            bail!("lambda values must be finite, got {s:?}");
        }
        Ok(v)
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, factor] = parts.as_slice() else {
            bail!("geometric range must be start:stop:factor, got {spec:?}");
        };
        let (start, stop, factor) = (num(start)?, num(stop)?, num(factor)?);
        if !(start > 0.0) || !(stop >= start) || !(factor > 1.0) {
            bail!("geometric range needs 0 < start <= stop and factor > 1, got {spec:?}");
        }
        let mut out = Vec::new();
        let mut l = start;
        while l <= stop * (1.0 + 1e-12) {
            out.push(l);
            l *= factor;
        }
        return Ok(out);
    }
    spec.split(',').map(num).collect()
}
