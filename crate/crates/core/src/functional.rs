//! The convex functional `G`, the full functional `E`, their gradients and
//! the dilation identity relating the physical and the rescaled shell.
//!
//! With `R = (1 + z)^{-1}` and `V_ν = G_ν + k_ν η` every functional here is
//!
//! ```text
//!   w_int   Σ_ν ⟨V_ν, R V_ν⟩
//! + w_field Tr[|k| z² R]
//! + w_weyl  ⟨η, |k| η⟩
//! + w_nc    Σ_ν Tr[k_ν² z² R − k_ν z k_ν z R]      (E only)
//! ```
//!
//! and only the weights change between conventions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoeffVector, GridConfig, MomentumGrid};
use crate::operator::{resolvent, SymOperator};
use crate::scalar::Scalar;

/// Overall factor convention.
///
/// `Intro` carries `Λ²/2, Λ/4, Λ` on the interaction, field and Weyl terms;
/// `Body` multiplies every coefficient by 4. The energy bound constants are
/// stated in `Body`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Body,
    Intro,
}

impl FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "body" => Ok(Self::Body),
            "intro" => Ok(Self::Intro),
            other => Err(format!("unknown normalization {other:?} (expected body or intro)")),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Body => "body",
            Self::Intro => "intro",
        })
    }
}

/// Coefficients of the four summands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub interaction: f64,
    pub field_trace: f64,
    pub weyl: f64,
    pub nonconvex: f64,
}

impl TermWeights {
    /// Weights for the grid's shell: `l = Λ` on the rescaled shell, `l = 1` on the physical one.
    pub fn for_grid(grid: &MomentumGrid, normalization: Normalization) -> Self {
        Self::with_lambda(grid.lambda_factor(), normalization)
    }

    pub fn with_lambda(l: f64, normalization: Normalization) -> Self {
        let base = Self { interaction: 0.5 * l * l, field_trace: 0.25 * l, weyl: l, nonconvex: 0.125 * l * l };
        match normalization {
            Normalization::Intro => base,
            Normalization::Body => base.scaled(4.0),
        }
    }

    /// Coefficients `½, ¼, 1, ⅛` with no powers of `Λ`.
    pub fn unweighted() -> Self {
        Self::with_lambda(1.0, Normalization::Intro)
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            interaction: c * self.interaction,
            field_trace: c * self.field_trace,
            weyl: c * self.weyl,
            nonconvex: c * self.nonconvex,
        }
    }
}

/// Per-term values of one functional evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub field_trace: f64,
    pub weyl_quadratic: f64,
    pub nonconvex: f64,
    pub total: f64,
    pub normalization: Normalization,
    pub g: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub n: usize,
}

impl EnergyBreakdown {
    fn new(grid: &MomentumGrid, normalization: Normalization, terms: [f64; 4]) -> Self {
        let c = grid.config();
        Self {
            interaction: terms[0],
            field_trace: terms[1],
            weyl_quadratic: terms[2],
            nonconvex: terms[3],
            total: terms.iter().sum(),
            normalization,
            g: c.g,
            lambda: c.lambda,
            sigma: c.sigma,
            n: grid.dim(),
        }
    }
}

/// Shared intermediate quantities of an evaluation at `(z, η)`.
struct Pieces<T: Scalar> {
    r: SymOperator<T>,
    v: [DVector<T>; 3],
    rv: [DVector<T>; 3],
}

impl<T: Scalar> Pieces<T> {
    fn new(grid: &MomentumGrid, z: &SymOperator<T>, eta: &CoeffVector<T>) -> Result<Self> {
        grid.check_operator(z)?;
        let v = grid.shifted_couplings(eta)?;
        let r = resolvent(z)?;
        let rv = [0, 1, 2].map(|nu| r.apply(&v[nu]));
        Ok(Self { r, v, rv })
    }

    fn interaction(&self) -> f64 {
        (0..3).map(|nu| self.v[nu].dotc(&self.rv[nu]).real()).sum()
    }
}

/// `Σ_i |k_i| (z² R)_ii` and the commutator sum, sharing `W = z R`.
fn trace_terms<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    r: &SymOperator<T>,
    with_nonconvex: bool,
) -> (f64, f64) {
    let zm = z.matrix();
    let w = z.product(r);
    let n = grid.dim();
    let abs_k = grid.abs_k();
    // (z W)_ii = Σ_j z_ij W_ji
    let mut field = 0.0;
    let mut diag_k2 = 0.0;
    let mut cross = 0.0;
    let k = [grid.k_comp(0), grid.k_comp(1), grid.k_comp(2)];
    for i in 0..n {
        let mut zw_ii = T::zero();
        for j in 0..n {
            let prod = zm[(i, j)] * w[(j, i)];
            zw_ii += prod;
            if with_nonconvex {
                let kk = k[0][i] * k[0][j] + k[1][i] * k[1][j] + k[2][i] * k[2][j];
                cross += prod.real() * kk;
            }
        }
        field += abs_k[i] * zw_ii.real();
        diag_k2 += abs_k[i] * abs_k[i] * zw_ii.real();
    }
    (field, diag_k2 - cross)
}

/// Evaluates the functional with explicit term weights. `full` adds the
/// commutator term that distinguishes `E` from `G`.
pub fn evaluate_with_weights<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    weights: &TermWeights,
    full: bool,
) -> Result<[f64; 4]> {
    let p = Pieces::new(grid, z, eta)?;
    let (field, nonconvex) = trace_terms(grid, z, &p.r, full);
    let weyl: f64 = eta.iter().zip(grid.abs_k().iter()).map(|(x, &k)| k * x.modulus_squared()).sum();
    Ok([
        weights.interaction * p.interaction(),
        weights.field_trace * field,
        weights.weyl * weyl,
        if full { weights.nonconvex * nonconvex } else { 0.0 },
    ])
}

/// The convex functional `G(z, η)`.
pub fn g_energy<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<EnergyBreakdown> {
    let w = TermWeights::for_grid(grid, normalization);
    let terms = evaluate_with_weights(grid, z, eta, &w, false)?;
    Ok(EnergyBreakdown::new(grid, normalization, terms))
}

/// The full functional `E(z, η) = G(z, η) + commutator term`.
pub fn e_full<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<EnergyBreakdown> {
    let w = TermWeights::for_grid(grid, normalization);
    let terms = evaluate_with_weights(grid, z, eta, &w, true)?;
    Ok(EnergyBreakdown::new(grid, normalization, terms))
}

/// `⟨η, (1 + z)^{-1} η⟩`, the jointly convex core of the interaction term.
pub fn interaction_form<T: Scalar>(z: &SymOperator<T>, eta: &CoeffVector<T>) -> Result<f64> {
    if z.dim() != eta.len() {
        return Err(Error::DimensionMismatch { expected: z.dim(), found: eta.len() });
    }
    Ok(resolvent(z)?.quadratic_form(eta))
}

/// Gradient of `G` in `z` for the real Hilbert–Schmidt pairing:
/// `w_field (|k| − R|k|R) − (w_int / 2) R P_η R`.
pub fn grad_z<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<SymOperator<T>> {
    let w = TermWeights::for_grid(grid, normalization);
    let p = Pieces::new(grid, z, eta)?;
    let n = grid.dim();
    let abs_k = grid.abs_k();
    let rm = p.r.matrix();
    // R|k|R = (R D)(R D)ᴴ with D = |k|^{1/2}.
    let sqrt_k = abs_k.map(f64::sqrt);
    let rd = DMatrix::from_fn(n, n, |i, j| rm[(i, j)].scale(sqrt_k[j]));
    let rkr = &rd * rd.adjoint();
    // R P R = 2 Σ (R V)(R V)ᴴ
    let mut rpr = DMatrix::<T>::zeros(n, n);
    for rv in &p.rv {
        rpr += rv * rv.adjoint();
    }
    let mut g = rkr.scale(-w.field_trace) - rpr.scale(w.interaction);
    for i in 0..n {
        g[(i, i)] += T::from_real(w.field_trace * abs_k[i]);
    }
    Ok(SymOperator::from_matrix(g))
}

/// Gradient of `G` in `η` for the real inner product: `2 (T η + ψ)`.
pub fn grad_eta<T: Scalar>(
    grid: &MomentumGrid,
    z: &SymOperator<T>,
    eta: &CoeffVector<T>,
    normalization: Normalization,
) -> Result<CoeffVector<T>> {
    let w = TermWeights::for_grid(grid, normalization);
    let p = Pieces::new(grid, z, eta)?;
    let n = grid.dim();
    Ok(DVector::from_fn(n, |i, _| {
        let mut acc = eta[i].scale(2.0 * w.weyl * grid.abs_k()[i]);
        for nu in 0..3 {
            acc += p.rv[nu][i].scale(2.0 * w.interaction * grid.k_comp(nu)[i]);
        }
        acc
    }))
}

/// The `η`-dependence of `G` at fixed `z`: `⟨η, Tη⟩ + 2 Re⟨ψ, η⟩ + const`
/// with `T = w_weyl |k| + w_int Σ k_ν R k_ν` and `ψ = w_int Σ k_ν R G_ν`.
#[derive(Clone, Debug)]
pub struct EtaQuadratic<T: Scalar = f64> {
    pub t: SymOperator<T>,
    pub psi: CoeffVector<T>,
    /// Norm of `ψ` without the cancellation between polarization components.
    pub psi_scale: f64,
}

impl<T: Scalar> EtaQuadratic<T> {
    pub fn new(grid: &MomentumGrid, z: &SymOperator<T>, normalization: Normalization) -> Result<Self> {
        grid.check_operator(z)?;
        let w = TermWeights::for_grid(grid, normalization);
        let r = resolvent(z)?;
        Ok(Self::from_resolvent(grid, &r, &w))
    }

    pub(crate) fn from_resolvent(grid: &MomentumGrid, r: &SymOperator<T>, w: &TermWeights) -> Self {
        let n = grid.dim();
        let rm = r.matrix();
        let mut t = DMatrix::<T>::zeros(n, n);
        let mut psi = DVector::<T>::zeros(n);
        let mut psi_abs = DVector::<f64>::zeros(n);
        for nu in 0..3 {
            let k = grid.k_comp(nu);
            for j in 0..n {
                for i in 0..n {
                    t[(i, j)] += rm[(i, j)].scale(w.interaction * k[i] * k[j]);
                }
            }
            let rg = rm * grid.coupling(nu).map(T::from_real);
            for i in 0..n {
                psi[i] += rg[i].scale(w.interaction * k[i]);
                psi_abs[i] += rg[i].modulus() * (w.interaction * k[i]).abs();
            }
        }
        for i in 0..n {
            t[(i, i)] += T::from_real(w.weyl * grid.abs_k()[i]);
        }
        Self { t: SymOperator::from_matrix(t), psi, psi_scale: psi_abs.norm() }
    }

    /// `T η + ψ`, half the gradient.
    pub fn residual(&self, eta: &CoeffVector<T>) -> CoeffVector<T> {
        self.t.apply(eta) + &self.psi
    }

    /// `⟨η, Tη⟩ + 2 Re⟨ψ, η⟩`.
    pub fn value(&self, eta: &CoeffVector<T>) -> f64 {
        self.t.quadratic_form(eta) + 2.0 * self.psi.dotc(eta).real()
    }

    /// The unique minimizer `−T^{-1} ψ`.
    pub fn minimizer(&self) -> Result<CoeffVector<T>> {
        let chol = self
            .t
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::LinearSolveFailure("eta quadratic form is not positive definite".into()))?;
        Ok(-chol.solve(&self.psi))
    }
}

/// Outcome of the dilation identity check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub lambda: f64,
    pub sigma: f64,
    pub n: usize,
    pub samples: usize,
    /// Largest `|G̃(z, η) − G(Φz, φη)| / max(|G̃|, 1)` over the samples.
    pub max_relative_deviation: f64,
    /// Largest `|⟨φf, φh⟩ − ⟨f, h⟩|` over random pairs, relative to `‖f‖‖h‖`.
    pub unitarity_defect: f64,
    /// Largest relative mismatch between physical nodes and dilated rescaled nodes.
    pub node_mismatch: f64,
}

/// Unitary dilation `f(k) ↦ Λ^{3/2} f(Λk)` from the physical to the
/// rescaled grid, applied through point values.
fn dilate_vector<T: Scalar>(big: &MomentumGrid, small: &MomentumGrid, f: &CoeffVector<T>) -> CoeffVector<T> {
    let l32 = small.config().lambda.powf(1.5);
    let values = big.to_values(f);
    let mapped: Vec<T> = values.iter().map(|x| x.scale(l32)).collect();
    small.from_values(&mapped)
}

/// Coefficient-space matrix of the dilation (diagonal on matched nodes).
fn dilation_diagonal(big: &MomentumGrid, small: &MomentumGrid) -> DVector<f64> {
    let l32 = small.config().lambda.powf(1.5);
    DVector::from_fn(big.dim(), |i, _| l32 * small.sqrt_weights()[i] / big.sqrt_weights()[i])
}

/// Checks `G̃(z, η) = G(Φ z, φ η)` where `G̃` lives on the physical shell
/// `σ ≤ |k| ≤ Λ` with Λ-free coefficients and `G` on the rescaled shell, both
/// in intro normalization. Samples: `(0, 0)`, random diagonal `z` with random
/// `η`, and random dense `z` with random `η`.
pub fn scaling_identity_check(config: &GridConfig, seed: u64) -> Result<ScalingReport> {
    let small = MomentumGrid::build(config)?;
    let big = MomentumGrid::build_unscaled(config)?;
    let lambda = config.lambda;
    let n = small.dim();

    let mut node_mismatch: f64 = 0.0;
    for i in 0..n {
        let (kb, ks) = (big.nodes()[i], small.nodes()[i]);
        if kb.tau != ks.tau {
            return Err(Error::GridMismatch(format!("polarization differs at node {i}")));
        }
        let scale = big.abs_k()[i];
        for c in 0..3 {
            node_mismatch = node_mismatch.max((kb.k[c] - lambda * ks.k[c]).abs() / scale);
        }
    }
    if node_mismatch > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "physical nodes are not the dilated rescaled nodes (relative mismatch {node_mismatch:.3e})"
        )));
    }

    let physical = TermWeights::for_grid(&big, Normalization::Intro);
    let d = dilation_diagonal(&big, &small);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |len: usize, s: f64| DVector::from_fn(len, |_, _| s * rng.sample::<f64, _>(StandardNormal));

    let mut cases: Vec<(SymOperator, DVector<f64>)> = vec![(SymOperator::zeros(n), DVector::zeros(n))];
    let diag = gauss(n, 1.0).map(|x| x.abs());
    cases.push((SymOperator::from_real_diagonal(&diag), gauss(n, 0.1)));
    let f = DMatrix::from_column_slice(n, n, gauss(n * n, 1.0 / n as f64).as_slice());
    cases.push((SymOperator::from_matrix(&f * f.transpose()), gauss(n, 0.1)));

    let mut max_dev: f64 = 0.0;
    for (z, eta) in &cases {
        let lhs: f64 = evaluate_with_weights(&big, z, eta, &physical, false)?.iter().sum();
        let z_mapped = z.congruence_diag(&d);
        let eta_mapped = dilate_vector(&big, &small, eta);
        let rhs = g_energy(&small, &z_mapped, &eta_mapped, Normalization::Intro)?.total;
        max_dev = max_dev.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }

    let mut unitarity: f64 = 0.0;
    for _ in 0..4 {
        let f = gauss(n, 1.0);
        let h = gauss(n, 1.0);
        let lhs = dilate_vector(&big, &small, &f).dot(&dilate_vector(&big, &small, &h));
        unitarity = unitarity.max((lhs - f.dot(&h)).abs() / (f.norm() * h.norm()));
    }

    Ok(ScalingReport {
        lambda,
        sigma: config.sigma,
        n,
        samples: cases.len(),
        max_relative_deviation: max_dev,
        unitarity_defect: unitarity,
        node_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{apply_j, conjugate_by_j};
    use nalgebra::Complex;
    use std::f64::consts::PI;

    fn grid(lambda: f64, g: f64, dims: (usize, usize, usize)) -> MomentumGrid {
        MomentumGrid::build(&GridConfig::new(lambda, 0.1, g, dims)).unwrap()
    }

    fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    fn random_psd(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> SymOperator {
        let f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymOperator::from_matrix(&f * f.transpose()).scale(scale / n as f64)
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymOperator {
        SymOperator::from_matrix(DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)))
    }

    #[test]
    fn zero_point_value() {
        let g = grid(10.0, 1.0, (8, 8, 8));
        let n = g.dim();
        let e = g_energy(&g, &SymOperator::<f64>::zeros(n), &DVector::zeros(n), Normalization::Body).unwrap();
        let expect = 8.0 * PI * 100.0 * (1.0 - 1e-4);
        assert!((e.total - expect).abs() < 1e-9 * expect, "{} vs {expect}", e.total);
        assert!((e.total - 2512.88).abs() < 1e-4 * 2512.88);
        assert_eq!(e.field_trace, 0.0);
        assert_eq!(e.weyl_quadratic, 0.0);
    }

    #[test]
    fn free_field_is_zero() {
        let g = grid(5.0, 0.0, (2, 2, 4));
        let n = g.dim();
        let e = g_energy(&g, &SymOperator::<f64>::zeros(n), &DVector::zeros(n), Normalization::Body).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn intro_is_a_quarter_of_body_and_terms_are_consistent() {
        let g = grid(6.0, 1.0, (2, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let z = random_psd(g.dim(), 2.0, &mut rng);
            let eta = random_vec(g.dim(), 0.3, &mut rng);
            let body = e_full(&g, &z, &eta, Normalization::Body).unwrap();
            let intro = e_full(&g, &z, &eta, Normalization::Intro).unwrap();
            assert!((body.total - 4.0 * intro.total).abs() < 1e-12 * body.total.abs());
            let sum = body.interaction + body.field_trace + body.weyl_quadratic + body.nonconvex;
            assert!((body.total - sum).abs() <= 1e-12 * body.total.abs());
            for t in [body.interaction, body.field_trace, body.weyl_quadratic] {
                assert!(t >= -1e-10 * body.total.abs());
            }
            let gb = g_energy(&g, &z, &eta, Normalization::Body).unwrap();
            assert_eq!(gb.nonconvex, 0.0);
            assert!((body.total - gb.total - body.nonconvex).abs() <= 1e-12 * body.total.abs());
        }
    }

    #[test]
    fn commutator_term_vanishes_for_diagonal_z() {
        let g = grid(4.0, 1.0, (2, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_vec(g.dim(), 1.0, &mut rng).map(f64::abs);
        let z = SymOperator::from_real_diagonal(&d);
        let eta = random_vec(g.dim(), 0.5, &mut rng);
        let e = e_full(&g, &z, &eta, Normalization::Body).unwrap();
        assert!(e.nonconvex.abs() < 1e-12 * e.total);
    }

    #[test]
    fn field_trace_matches_direct_products() {
        let g = grid(3.0, 1.0, (2, 2, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_psd(g.dim(), 3.0, &mut rng);
        let r = resolvent(&z).unwrap();
        let z2r = z.matrix() * z.matrix() * r.matrix();
        let k = DMatrix::from_diagonal(g.abs_k());
        let direct = (&k * &z2r).trace();
        let mut nc = (&k * &k * &z2r).trace();
        for nu in 0..3 {
            let kn = DMatrix::from_diagonal(g.k_comp(nu));
            nc -= (&kn * z.matrix() * &kn * z.matrix() * r.matrix()).trace();
        }
        let terms = evaluate_with_weights(
            &g,
            &z,
            &DVector::zeros(g.dim()),
            &TermWeights { interaction: 0.0, field_trace: 1.0, weyl: 0.0, nonconvex: 1.0 },
            true,
        )
        .unwrap();
        assert!((terms[1] - direct).abs() < 1e-12 * direct.abs());
        assert!((terms[3] - nc).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn gradients_at_the_origin() {
        let g = grid(8.0, 1.0, (2, 4, 4));
        let n = g.dim();
        let zero = SymOperator::<f64>::zeros(n);
        let eta0 = DVector::<f64>::zeros(n);
        let gz = grad_z(&g, &zero, &eta0, Normalization::Body).unwrap();
        let p = crate::operator::projector_p(&g, &eta0, 1.0).unwrap();
        assert!((gz.matrix() + p.matrix() * 64.0).norm() < 1e-12 * p.hs_norm() * 64.0);
        let ge = grad_eta(&g, &zero, &eta0, Normalization::Body).unwrap();
        assert!(ge.norm() < 1e-12);
    }

    fn central_difference(f: impl Fn(f64) -> f64, delta: f64) -> f64 {
        (f(delta) - f(-delta)) / (2.0 * delta)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = grid(5.0, 1.0, (2, 4, 4));
        let n = g.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [Normalization::Body, Normalization::Intro] {
            for _ in 0..3 {
                let z = random_psd(n, 1.0, &mut rng);
                let eta = random_vec(n, 0.2, &mut rng);
                let h = random_sym(n, &mut rng);
                let h = h.scale(1.0 / h.hs_norm());
                let e = random_vec(n, 1.0, &mut rng).normalize();
                let gz = grad_z(&g, &z, &eta, norm).unwrap();
                let fd = central_difference(|d| g_energy(&g, &(&z + &h.scale(d)), &eta, norm).unwrap().total, 1e-5);
                let an = gz.hs_inner(&h);
                assert!((an - fd).abs() <= 1e-6 * an.abs().max(gz.hs_norm()), "{an} vs {fd}");
                let ge = grad_eta(&g, &z, &eta, norm).unwrap();
                let fd = central_difference(|d| g_energy(&g, &z, &(&eta + &e * d), norm).unwrap().total, 1e-5);
                let an = ge.dot(&e);
                assert!((an - fd).abs() <= 1e-6 * an.abs().max(ge.norm()), "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn eta_quadratic_reproduces_the_functional() {
        let g = grid(4.0, 1.0, (2, 2, 4));
        let n = g.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = random_psd(n, 1.0, &mut rng);
        let q = EtaQuadratic::new(&g, &z, Normalization::Body).unwrap();
        let g0 = g_energy(&g, &z, &DVector::zeros(n), Normalization::Body).unwrap().total;
        let eta = random_vec(n, 0.4, &mut rng);
        let full = g_energy(&g, &z, &eta, Normalization::Body).unwrap().total;
        assert!((full - g0 - q.value(&eta)).abs() < 1e-10 * full);
        let grad = grad_eta(&g, &z, &eta, Normalization::Body).unwrap();
        assert!((grad - q.residual(&eta) * 2.0).norm() < 1e-10 * q.psi.norm().max(1.0));
        let star = q.minimizer().unwrap();
        assert!(q.residual(&star).norm() <= 1e-10 * q.psi.norm());
    }

    #[test]
    fn functional_is_j_invariant_in_real_and_complex_modes() {
        let g = grid(6.0, 1.0, (2, 4, 4));
        let n = g.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z = random_psd(n, 1.0, &mut rng);
        let eta = random_vec(n, 0.3, &mut rng);
        let a = g_energy(&g, &z, &eta, Normalization::Body).unwrap().total;
        let b = g_energy(&g, &conjugate_by_j(&g, &z).unwrap(), &apply_j(&g, &eta).unwrap(), Normalization::Body)
            .unwrap()
            .total;
        assert!((a - b).abs() <= 1e-10 * a.abs());

        let f = DMatrix::from_fn(n, n, |_, _| {
            Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        let zc = SymOperator::from_matrix(&f * f.adjoint()).scale(1.0 / n as f64);
        let ec = DVector::from_fn(n, |_, _| {
            Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * 0.2
        });
        for full in [false, true] {
            let w = TermWeights::for_grid(&g, Normalization::Body);
            let a: f64 = evaluate_with_weights(&g, &zc, &ec, &w, full).unwrap().iter().sum();
            let jz = conjugate_by_j(&g, &zc).unwrap();
            let je = apply_j(&g, &ec).unwrap();
            let b: f64 = evaluate_with_weights(&g, &jz, &je, &w, full).unwrap().iter().sum();
            assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn real_embedding_into_complex_mode_agrees() {
        let g = grid(3.0, 1.0, (2, 2, 4));
        let n = g.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let z = random_psd(n, 1.0, &mut rng);
        let eta = random_vec(n, 0.3, &mut rng);
        let zc = SymOperator::from_matrix(z.matrix().map(|x| Complex::new(x, 0.0)));
        let ec = eta.map(|x| Complex::new(x, 0.0));
        let a = e_full(&g, &z, &eta, Normalization::Body).unwrap().total;
        let b = e_full(&g, &zc, &ec, Normalization::Body).unwrap().total;
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn rejects_operators_outside_the_domain() {
        let g = grid(3.0, 1.0, (2, 2, 4));
        let n = g.dim();
        let z = SymOperator::<f64>::identity(n).scale(-0.5);
        assert!(matches!(g_energy(&g, &z, &DVector::zeros(n), Normalization::Body), Err(Error::NotInDomain { .. })));
        assert!(g_energy(&g, &SymOperator::<f64>::zeros(3), &DVector::zeros(n), Normalization::Body).is_err());
    }

    #[test]
    fn dilation_identity_holds_on_matched_grids() {
        for lambda in [1.0, 8.0, 40.0] {
            let cfg = GridConfig::new(lambda, 0.1, 1.0, (3, 4, 4));
            let report = scaling_identity_check(&cfg, 5).unwrap();
            assert!(report.max_relative_deviation <= 1e-10, "{report:?}");
            assert!(report.unitarity_defect <= 1e-12, "{report:?}");
        }
    }

    #[test]
    fn dilation_at_the_origin_is_half_the_coupling_norm() {
        let cfg = GridConfig::new(8.0, 0.1, 1.0, (3, 4, 4));
        let big = MomentumGrid::build_unscaled(&cfg).unwrap();
        let small = MomentumGrid::build(&cfg).unwrap();
        let n = big.dim();
        let w = TermWeights::for_grid(&big, Normalization::Intro);
        let lhs: f64 = evaluate_with_weights(&big, &SymOperator::<f64>::zeros(n), &DVector::zeros(n), &w, false)
            .unwrap()
            .iter()
            .sum();
        let half_norm: f64 = 0.5 * (0..3).map(|nu| big.coupling(nu).norm_squared()).sum::<f64>();
        assert!((lhs - half_norm).abs() < 1e-12 * lhs);
        let rhs =
            g_energy(&small, &SymOperator::<f64>::zeros(n), &DVector::zeros(n), Normalization::Intro).unwrap().total;
        assert!((lhs - rhs).abs() < 1e-12 * lhs);
    }

    #[test]
    fn normalization_parses() {
        assert_eq!("body".parse::<Normalization>().unwrap(), Normalization::Body);
        assert_eq!("INTRO".parse::<Normalization>().unwrap(), Normalization::Intro);
        assert!("both".parse::<Normalization>().is_err());
        assert_eq!(Normalization::default(), Normalization::Body);
    }
}
