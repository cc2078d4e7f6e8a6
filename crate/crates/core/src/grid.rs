//! Quadrature discretization of the photon momentum shell.
//!
//! Nodes are the product of a Gauss–Legendre rule in `|k|`, a Gauss–Legendre
//! rule in `cos θ` and a uniform azimuthal rule, doubled over the two
//! polarizations. Lower-hemisphere directions are built as exact negatives of
//! their upper-hemisphere antipodes, so `k ↦ -k` is an exact permutation of the
//! nodes and `ε(-k, ±) = -ε(k, ±)` holds bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Normalization;
use crate::operator::SymOperator;
use crate::quadrature::gauss_legendre_on;
use crate::scalar::Scalar;

/// Element of the discretized one-photon space in orthonormal coordinates:
/// entry `i` is `f(k_i, τ_i) · sqrt(w_i)`.
pub type CoeffVector<T = f64> = DVector<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

/// Which shell the grid discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShellScale {
    /// `σ/Λ ≤ |k| ≤ 1`; functionals carry explicit powers of `Λ`.
    Rescaled,
    /// `σ ≤ |k| ≤ Λ`; functionals carry no `Λ` weights.
    Unscaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub g: f64,
    pub n_radial: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub normalization: Normalization,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lambda: 16.0,
            sigma: 0.1,
            g: 1.0,
            n_radial: 8,
            n_polar: 8,
            n_azimuth: 8,
            normalization: Normalization::Body,
        }
    }
}

impl GridConfig {
    pub fn new(lambda: f64, sigma: f64, g: f64, dims: (usize, usize, usize)) -> Self {
        Self {
            lambda,
            sigma,
            g,
            n_radial: dims.0,
            n_polar: dims.1,
            n_azimuth: dims.2,
            normalization: Normalization::Body,
        }
    }

    /// Total node count `2 · n_radial · n_polar · n_azimuth`.
    pub fn dim(&self) -> usize {
        2 * self.n_radial * self.n_polar * self.n_azimuth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 1, got {}", self.lambda));
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return bad(format!("g must be finite and >= 0, got {}", self.g));
        }
        if self.n_radial < 2 {
            return bad(format!("n_radial must be >= 2, got {}", self.n_radial));
        }
        if self.n_polar < 2 {
            return bad(format!("n_polar must be >= 2, got {}", self.n_polar));
        }
        if self.n_polar % 2 == 1 {
            return bad(format!(
                "n_polar = {} is odd: the middle polar node would sit on the equator k3 = 0",
                self.n_polar
            ));
        }
        if self.n_azimuth < 4 || self.n_azimuth % 2 == 1 {
            return bad(format!("n_azimuth must be even and >= 4, got {}", self.n_azimuth));
        }
        Ok(())
    }

    /// Parses a plain-text `key = value` file. Blank lines and `#` comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv_str(text)?;
        Ok(config)
    }

    /// Overrides fields of `self` with the assignments in `text`.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse().map_err(|_| format!("cannot parse {key} = {value:?}"))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "g" => self.g = num(key, value)?,
            "n_radial" | "nr" => self.n_radial = num(key, value)?,
            "n_polar" | "ntheta" => self.n_polar = num(key, value)?,
            "n_azimuth" | "nphi" => self.n_azimuth = num(key, value)?,
            "normalization" => self.normalization = value.parse()?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda={} sigma={} g={} grid={}x{}x{} (N={})",
            self.lambda,
            self.sigma,
            self.g,
            self.n_radial,
            self.n_polar,
            self.n_azimuth,
            self.dim()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub k: [f64; 3],
    pub tau: Polarization,
}

/// Discretized shell `S(a, b) × {+, −}` with polarization data.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct MomentumGrid {
    config: GridConfig,
    scale: ShellScale,
    inner: f64,
    outer: f64,
    nodes: Vec<Node>,
    weights: Vec<f64>,
    sqrt_weights: DVector<f64>,
    abs_k: DVector<f64>,
    k_comp: [DVector<f64>; 3],
    eps: [DVector<f64>; 3],
    antipode: Vec<usize>,
    coupling: [DVector<f64>; 3],
}

impl MomentumGrid {
    /// Grid on the rescaled shell `σ/Λ ≤ |k| ≤ 1`.
    pub fn build(config: &GridConfig) -> Result<Self> {
        config.validate()?;
        Self::build_shell(config, ShellScale::Rescaled, config.sigma / config.lambda, 1.0)
    }

    /// Grid on the physical shell `σ ≤ |k| ≤ Λ`, node-for-node the dilation
    /// `k ↦ Λk` of [`MomentumGrid::build`].
    pub fn build_unscaled(config: &GridConfig) -> Result<Self> {
        config.validate()?;
        Self::build_shell(config, ShellScale::Unscaled, config.sigma, config.lambda)
    }

    fn build_shell(config: &GridConfig, scale: ShellScale, inner: f64, outer: f64) -> Result<Self> {
        let (nr, nt, nf) = (config.n_radial, config.n_polar, config.n_azimuth);
        let (radii, radial_w) = gauss_legendre_on(nr, inner, outer);
        let (cos_theta, polar_w) = gauss_legendre_on(nt, -1.0, 1.0);
        let azimuth_w = 2.0 * PI / nf as f64;

        if cos_theta.iter().any(|&c| c == 0.0 || c.abs() >= 1.0) {
            return Err(Error::InvalidConfig("polar layout places a node on the equator or a pole".into()));
        }

        // Unit directions on the upper hemisphere (cos θ > 0); the lower
        // hemisphere is filled with exact negatives.
        let index_dir = |j: usize, l: usize| j * nf + l;
        let mut dirs = vec![[0.0f64; 3]; nt * nf];
        for j in nt / 2..nt {
            let c = cos_theta[j];
            let s = (1.0 - c * c).sqrt();
            for l in 0..nf {
                let phi = 2.0 * PI * (l as f64 + 0.5) / nf as f64;
                dirs[index_dir(j, l)] = [s * phi.cos(), s * phi.sin(), c];
            }
        }
        for j in 0..nt / 2 {
            for l in 0..nf {
                let up = dirs[index_dir(nt - 1 - j, (l + nf / 2) % nf)];
                dirs[index_dir(j, l)] = [-up[0], -up[1], -up[2]];
            }
        }

        let n = 2 * nr * nt * nf;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut eps_rows = Vec::with_capacity(n);
        let mut antipode = Vec::with_capacity(n);
        let flat = |t: usize, r: usize, j: usize, l: usize| ((t * nr + r) * nt + j) * nf + l;
        for (t, tau) in [Polarization::Plus, Polarization::Minus].into_iter().enumerate() {
            for r in 0..nr {
                for j in 0..nt {
                    for l in 0..nf {
                        let d = dirs[index_dir(j, l)];
                        let radius = radii[r];
                        nodes.push(Node { k: [radius * d[0], radius * d[1], radius * d[2]], tau });
                        weights.push(radius * radius * radial_w[r] * polar_w[j] * azimuth_w);
                        eps_rows.push(polarization(d, tau));
                        antipode.push(flat(t, r, nt - 1 - j, (l + nf / 2) % nf));
                    }
                }
            }
        }

        let abs_k = DVector::from_iterator(n, nodes.iter().map(|nd| norm3(nd.k)));
        let k_comp = [0, 1, 2].map(|c| DVector::from_iterator(n, nodes.iter().map(|nd| nd.k[c])));
        let eps = [0, 1, 2].map(|c| DVector::from_iterator(n, eps_rows.iter().map(|e| e[c])));
        let sqrt_weights = DVector::from_iterator(n, weights.iter().map(|w| w.sqrt()));

        let mut grid = Self {
            config: config.clone(),
            scale,
            inner,
            outer,
            nodes,
            weights,
            sqrt_weights,
            abs_k,
            k_comp,
            eps,
            antipode,
            coupling: [DVector::zeros(0), DVector::zeros(0), DVector::zeros(0)],
        };
        grid.coupling = coupling_vectors(&grid, config.g);
        Ok(grid)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn scale(&self) -> ShellScale {
        self.scale
    }

    /// Power of `Λ` multiplying `|k|` in the functionals: `Λ` on the rescaled
    /// shell, `1` on the physical one.
    pub fn lambda_factor(&self) -> f64 {
        match self.scale {
            ShellScale::Rescaled => self.config.lambda,
            ShellScale::Unscaled => 1.0,
        }
    }

    pub fn shell(&self) -> (f64, f64) {
        (self.inner, self.outer)
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sqrt_weights(&self) -> &DVector<f64> {
        &self.sqrt_weights
    }

    pub fn abs_k(&self) -> &DVector<f64> {
        &self.abs_k
    }

    /// Component `ν ∈ {0, 1, 2}` of the momentum at every node.
    pub fn k_comp(&self, nu: usize) -> &DVector<f64> {
        &self.k_comp[nu]
    }

    pub fn eps(&self, nu: usize) -> &DVector<f64> {
        &self.eps[nu]
    }

    pub fn antipode(&self) -> &[usize] {
        &self.antipode
    }

    /// `G_ν` for the grid's own coupling constant.
    pub fn coupling(&self, nu: usize) -> &DVector<f64> {
        &self.coupling[nu]
    }

    /// Smallest `|k|` over the nodes; bounded below by the inner radius.
    pub fn min_abs_k(&self) -> f64 {
        self.abs_k.min()
    }

    /// `G_ν + k_ν η` for `ν = 1, 2, 3`.
    pub fn shifted_couplings<T: Scalar>(&self, eta: &CoeffVector<T>) -> Result<[DVector<T>; 3]> {
        self.check_vector(eta)?;
        Ok([0, 1, 2].map(|nu| {
            DVector::from_fn(self.dim(), |i, _| T::from_real(self.coupling[nu][i]) + eta[i].scale(self.k_comp[nu][i]))
        }))
    }

    /// Diagonal multiplication operator with the given symbol values.
    pub fn multiplication<T: Scalar>(&self, symbol: &DVector<f64>) -> SymOperator<T> {
        SymOperator::from_real_diagonal(symbol)
    }

    pub(crate) fn check_vector<T: Scalar>(&self, v: &DVector<T>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(())
    }

    pub(crate) fn check_operator<T: Scalar>(&self, z: &SymOperator<T>) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: z.dim() });
        }
        Ok(())
    }

    /// Expands point values `f(k_i, τ_i)` into orthonormal coordinates.
    pub fn from_values<T: Scalar>(&self, values: &[T]) -> CoeffVector<T> {
        DVector::from_fn(self.dim(), |i, _| values[i].scale(self.sqrt_weights[i]))
    }

    /// Point values `f(k_i, τ_i)` of a coordinate vector.
    pub fn to_values<T: Scalar>(&self, f: &CoeffVector<T>) -> Vec<T> {
        f.iter().zip(self.sqrt_weights.iter()).map(|(&x, &s)| x.unscale(s)).collect()
    }

    /// JSON document with nodes, weights and polarization vectors.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = (0..self.dim())
            .map(|i| {
                serde_json::json!({
                    "k": self.nodes[i].k,
                    "tau": self.nodes[i].tau,
                    "weight": self.weights[i],
                    "eps": [self.eps[0][i], self.eps[1][i], self.eps[2][i]],
                    "antipode": self.antipode[i],
                })
            })
            .collect();
        serde_json::json!({
            "config": self.config,
            "scale": self.scale,
            "shell": [self.inner, self.outer],
            "dim": self.dim(),
            "nodes": nodes,
        })
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Coulomb-gauge polarization for a unit direction off the equator.
///
/// Upper hemisphere: `ε(+) = ẑ × k̂ / |ẑ × k̂|`, `ε(−) = k̂ × ε(+)`.
/// Lower hemisphere: `ε(k, ±) = −ε(−k, ±)`.
fn polarization(dir: [f64; 3], tau: Polarization) -> [f64; 3] {
    if dir[2] < 0.0 {
        let e = polarization([-dir[0], -dir[1], -dir[2]], tau);
        return [-e[0], -e[1], -e[2]];
    }
    let perp = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let plus = [-dir[1] / perp, dir[0] / perp, 0.0];
    match tau {
        Polarization::Plus => plus,
        Polarization::Minus => cross(dir, plus),
    }
}

/// `(G_ν)_i = g · |k_i|^{-1/2} · ε_ν(k_i, τ_i) · sqrt(w_i)`.
pub fn coupling_vectors(grid: &MomentumGrid, g: f64) -> [CoeffVector; 3] {
    [0, 1, 2].map(|nu| {
        DVector::from_fn(grid.dim(), |i, _| g * grid.eps[nu][i] * grid.sqrt_weights[i] / grid.abs_k[i].sqrt())
    })
}

/// `(Jf)_i = conj(f_{antipode(i)})`.
pub fn apply_j<T: Scalar>(grid: &MomentumGrid, f: &CoeffVector<T>) -> Result<CoeffVector<T>> {
    grid.check_vector(f)?;
    Ok(DVector::from_fn(grid.dim(), |i, _| f[grid.antipode[i]].conjugate()))
}

/// `J z J`: entry `(i, j)` becomes `conj(z[antipode(i), antipode(j)])`.
pub fn conjugate_by_j<T: Scalar>(grid: &MomentumGrid, z: &SymOperator<T>) -> Result<SymOperator<T>> {
    grid.check_operator(z)?;
    let a = &grid.antipode;
    let m = z.matrix();
    Ok(SymOperator::from_matrix(DMatrix::from_fn(grid.dim(), grid.dim(), |i, j| m[(a[i], a[j])].conjugate())))
}
