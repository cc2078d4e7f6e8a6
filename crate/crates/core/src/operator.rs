//! Dense self-adjoint operators in orthonormal coordinates.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{CoeffVector, MomentumGrid};
use crate::scalar::Scalar;

/// Relative floor below which negative eigenvalues count as rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Default lower bound `-ε` admitted for `z` when forming `(1 + z)^{-1}`.
pub const DEFAULT_EPS_FLOOR: f64 = 0.25;

const BINARY_MAGIC: &[u8; 8] = b"BHFSYMOP";

/// Dense self-adjoint `N × N` operator. Construction symmetrizes.
#[derive(Clone, Debug, PartialEq)]
pub struct SymOperator<T: Scalar = f64> {
    m: DMatrix<T>,
}

/// `M = Q diag(λ) Qᴴ` with eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralFactorization<T: Scalar = f64> {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Scalar> SpectralFactorization<T> {
    /// `Q diag(f(λ)) Qᴴ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymOperator<T> {
        let values = self.eigenvalues.map(f);
        self.rebuild(&values)
    }

    pub fn reconstruct(&self) -> SymOperator<T> {
        self.rebuild(&self.eigenvalues)
    }

    fn rebuild(&self, values: &DVector<f64>) -> SymOperator<T> {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col.scale_mut(values[j]);
        }
        SymOperator::from_matrix(scaled * q.adjoint())
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }
}

impl<T: Scalar> SymOperator<T> {
    /// Symmetrizes `m` as `(m + mᴴ) / 2`.
    pub fn from_matrix(m: DMatrix<T>) -> Self {
        assert!(m.is_square(), "operator matrix must be square");
        let half = T::from_real(0.5);
        let adj = m.adjoint();
        Self { m: (m + adj) * half }
    }

    pub fn zeros(n: usize) -> Self {
        Self { m: DMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n) }
    }

    pub fn from_real_diagonal(d: &DVector<f64>) -> Self {
        let n = d.len();
        Self { m: DMatrix::from_fn(n, n, |i, j| if i == j { T::from_real(d[i]) } else { T::zero() }) }
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_real_diagonal(&DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.m
    }

    pub fn eigen(&self) -> SpectralFactorization<T> {
        let eig = self.m.clone().symmetric_eigen();
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        SpectralFactorization { eigenvalues, eigenvectors }
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.eigen().eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().min()
    }

    /// All eigenvalues `≥ -1e-10 · ‖M‖`.
    pub fn is_psd(&self) -> bool {
        let e = self.eigen();
        e.min() >= -PSD_TOLERANCE * e.spectral_radius()
    }

    /// Membership in `HS_ε`: all eigenvalues `≥ -ε`.
    pub fn is_hs_eps(&self, eps: f64) -> bool {
        self.min_eigenvalue() >= -eps
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|x| x.real()).sum()
    }

    /// Frobenius norm.
    pub fn hs_norm(&self) -> f64 {
        self.m.norm()
    }

    /// Spectral norm.
    pub fn op_norm(&self) -> f64 {
        self.eigen().spectral_radius()
    }

    /// `Re Tr[A B]`, the real Hilbert–Schmidt pairing of self-adjoint operators.
    pub fn hs_inner(&self, other: &Self) -> f64 {
        self.m.iter().zip(other.m.iter()).map(|(a, b)| (a.conjugate() * *b).real()).sum()
    }

    pub fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.m * v
    }

    /// `Re ⟨v, M v⟩`.
    pub fn quadratic_form(&self, v: &DVector<T>) -> f64 {
        v.dotc(&(&self.m * v)).real()
    }

    /// Plain matrix product; not self-adjoint in general.
    pub fn product(&self, other: &Self) -> DMatrix<T> {
        &self.m * &other.m
    }

    /// `A B A`, self-adjoint whenever `A` and `B` are.
    pub fn sandwich(&self, inner: &Self) -> Self {
        Self::from_matrix(&self.m * &inner.m * &self.m)
    }

    pub fn square(&self) -> Self {
        Self::from_matrix(&self.m * &self.m)
    }

    /// `D M D` for the real diagonal `D = diag(d)`.
    pub fn congruence_diag(&self, d: &DVector<f64>) -> Self {
        let n = self.dim();
        Self { m: DMatrix::from_fn(n, n, |i, j| self.m[(i, j)].scale(d[i] * d[j])) }
    }

    /// `M + c·I`.
    pub fn shift(&self, c: f64) -> Self {
        let mut m = self.m.clone();
        for i in 0..self.dim() {
            m[(i, i)] += T::from_real(c);
        }
        Self { m }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { m: self.m.map(|x| x.scale(c)) }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.real().is_finite() && x.imaginary().is_finite())
    }

    /// JSON document `{dim, scalar, rows}`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = (0..self.dim())
            .map(|i| serde_json::Value::Array((0..self.dim()).map(|j| self.m[(i, j)].to_json()).collect()))
            .collect();
        serde_json::json!({ "dim": self.dim(), "scalar": T::KIND, "rows": rows })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let fmt = |msg: &str| Error::Format(msg.to_string());
        let dim = value["dim"].as_u64().ok_or_else(|| fmt("missing dim"))? as usize;
        if value["scalar"].as_str() != Some(T::KIND) {
            return Err(fmt("scalar kind does not match"));
        }
        let rows = value["rows"].as_array().ok_or_else(|| fmt("missing rows"))?;
        if rows.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: rows.len() });
        }
        let mut m = DMatrix::zeros(dim, dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| fmt("row is not an array"))?;
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            for (j, x) in row.iter().enumerate() {
                m[(i, j)] = T::from_json(x).ok_or_else(|| fmt("bad matrix entry"))?;
            }
        }
        Ok(Self::from_matrix(m))
    }

    /// Binary layout: 8-byte magic, `u64` dim, `u8` scalar kind (0 real,
    /// 1 complex), then row-major little-endian entries.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(17 + self.dim() * self.dim() * T::WIDTH);
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        buf.push(kind_byte::<T>());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                self.m[(i, j)].write_le(&mut buf);
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 17];
        input.read_exact(&mut header)?;
        if &header[..8] != BINARY_MAGIC {
            return Err(Error::Format("bad operator magic".into()));
        }
        let dim = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
        if header[16] != kind_byte::<T>() {
            return Err(Error::Format("scalar kind does not match".into()));
        }
        let mut body = vec![0u8; dim * dim * T::WIDTH];
        input.read_exact(&mut body)?;
        let m = DMatrix::from_fn(dim, dim, |i, j| T::read_le(&body[(i * dim + j) * T::WIDTH..]));
        Ok(Self::from_matrix(m))
    }
}

fn kind_byte<T: Scalar>() -> u8 {
    if T::KIND == "real" {
        0
    } else {
        1
    }
}

impl<T: Scalar> Add for &SymOperator<T> {
    type Output = SymOperator<T>;
    fn add(self, rhs: Self) -> SymOperator<T> {
        SymOperator { m: &self.m + &rhs.m }
    }
}

impl<T: Scalar> Sub for &SymOperator<T> {
    type Output = SymOperator<T>;
    fn sub(self, rhs: Self) -> SymOperator<T> {
        SymOperator { m: &self.m - &rhs.m }
    }
}

impl<T: Scalar> Add for SymOperator<T> {
    type Output = SymOperator<T>;
    fn add(self, rhs: Self) -> SymOperator<T> {
        &self + &rhs
    }
}

impl<T: Scalar> Sub for SymOperator<T> {
    type Output = SymOperator<T>;
    fn sub(self, rhs: Self) -> SymOperator<T> {
        &self - &rhs
    }
}

impl<T: Scalar> Neg for SymOperator<T> {
    type Output = SymOperator<T>;
    fn neg(self) -> SymOperator<T> {
        SymOperator { m: -self.m }
    }
}

impl<T: Scalar> Mul<f64> for &SymOperator<T> {
    type Output = SymOperator<T>;
    fn mul(self, c: f64) -> SymOperator<T> {
        self.scale(c)
    }
}

/// Positive square root. Eigenvalues in `[-1e-10·‖M‖, 0)` are clamped to zero.
pub fn psd_sqrt<T: Scalar>(m: &SymOperator<T>) -> Result<SymOperator<T>> {
    let eig = m.eigen();
    let tol = PSD_TOLERANCE * eig.spectral_radius();
    let min = eig.min();
    if min < -tol {
        return Err(Error::NotPsd { min_eigenvalue: min, tolerance: tol });
    }
    Ok(eig.map(|x| x.max(0.0).sqrt()))
}

/// `(1 + z)^{-1}` for `z ∈ HS_ε` with the default `ε = 0.25`.
pub fn resolvent<T: Scalar>(z: &SymOperator<T>) -> Result<SymOperator<T>> {
    resolvent_with_floor(z, DEFAULT_EPS_FLOOR)
}

/// `(1 + z)^{-1}`, rejecting `z` with an eigenvalue below `-eps`.
pub fn resolvent_with_floor<T: Scalar>(z: &SymOperator<T>, eps: f64) -> Result<SymOperator<T>> {
    // z + ε ≻ 0 is exactly the domain condition; Cholesky decides it without a
    // full eigendecomposition.
    if z.shift(eps).m.clone().cholesky().is_none() {
        return Err(Error::NotInDomain { min_eigenvalue: z.min_eigenvalue(), floor: -eps });
    }
    let chol = z
        .shift(1.0)
        .m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotInDomain { min_eigenvalue: z.min_eigenvalue(), floor: -eps })?;
    Ok(SymOperator::from_matrix(chol.inverse()))
}

/// `P_η = 2 Σ_ν |G_ν + k_ν η⟩⟨G_ν + k_ν η|` with `G_ν` at coupling `g`.
pub fn projector_p<T: Scalar>(grid: &MomentumGrid, eta: &CoeffVector<T>, g: f64) -> Result<SymOperator<T>> {
    grid.check_vector(eta)?;
    let couplings = crate::grid::coupling_vectors(grid, g);
    let v: Vec<DVector<T>> = (0..3)
        .map(|nu| {
            DVector::from_fn(grid.dim(), |i, _| T::from_real(couplings[nu][i]) + eta[i].scale(grid.k_comp(nu)[i]))
        })
        .collect();
    Ok(projector_from(&v))
}

/// `2 Σ |v⟩⟨v|` over the given vectors.
pub(crate) fn projector_from<T: Scalar>(v: &[DVector<T>]) -> SymOperator<T> {
    let n = v.first().map_or(0, |x| x.len());
    let mut m = DMatrix::<T>::zeros(n, n);
    for x in v {
        m += x * x.adjoint();
    }
    SymOperator::from_matrix(m).scale(2.0)
}

/// `Tr[(A² + B²)^{1/2} − B]` for `A, B ⪰ 0`.
pub fn trace_root_gap<T: Scalar>(a: &SymOperator<T>, b: &SymOperator<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    for op in [a, b] {
        let eig = op.eigen();
        let tol = PSD_TOLERANCE * eig.spectral_radius().max(1.0);
        if eig.min() < -tol {
            return Err(Error::NotPsd { min_eigenvalue: eig.min(), tolerance: tol });
        }
    }
    let sum = &a.square() + &b.square();
    Ok(psd_sqrt(&sum)?.trace() - b.trace())
}
