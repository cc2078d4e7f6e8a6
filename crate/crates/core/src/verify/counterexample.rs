//! Rank-two family `z(t, s) = t|ψ⟩⟨ψ| + s|φ⟩⟨φ|` along which the full
//! functional loses convexity.
//!
//! With `ψ, φ` orthonormal and orthogonal to every `G_ν + k_ν η`, the
//! interaction term is constant on the family and the rest reduces to
//!
//! ```text
//! E'(t, s) = a t²/(1+t) + b s²/(1+s) − c (ts/(1+t) + ts/(1+s))
//! ```
//!
//! with `a = α⟨|k|ψ,ψ⟩ + β(⟨|k|²ψ,ψ⟩ − Σ⟨k_νψ,ψ⟩²)`, `b` likewise for `φ`
//! and `c = β Σ⟨k_νψ,φ⟩²`, where `α, β` weigh the field trace and the
//! commutator term. Unit weights `α = 1, β = ½` give the bare form; the body
//! normalization of `E` has `α = Λ, β = Λ²/2` on the rescaled shell.

use nalgebra::{DVector, Matrix2, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gaussian_vector;
use crate::error::{Error, Result};
use crate::functional::{evaluate_with_weights, Normalization, TermWeights};
use crate::grid::{CoeffVector, MomentumGrid};
use crate::operator::SymOperator;

const MAX_ATTEMPTS: usize = 8;
const MIN_COUPLING: f64 = 1e-8;

/// Constants of the reduced two-variable function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTwoCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// `E'(t, s)` for the given constants.
pub fn rank_two_energy(k: &RankTwoCoefficients, t: f64, s: f64) -> f64 {
    k.a * t * t / (1.0 + t) + k.b * s * s / (1.0 + s) - k.c * (t * s / (1.0 + t) + t * s / (1.0 + s))
}

/// Closed-form Hessian of [`rank_two_energy`].
pub fn closed_form_hessian(k: &RankTwoCoefficients, t: f64, s: f64) -> [[f64; 2]; 2] {
    let h11 = (2.0 * k.a + 2.0 * k.c * s) / (1.0 + t).powi(3);
    let h22 = (2.0 * k.b + 2.0 * k.c * t) / (1.0 + s).powi(3);
    let h12 = -k.c * (1.0 / (1.0 + t).powi(2) + 1.0 / (1.0 + s).powi(2));
    [[h11, h12], [h12, h22]]
}

fn det(h: &[[f64; 2]; 2]) -> f64 {
    h[0][0] * h[1][1] - h[0][1] * h[1][0]
}

fn frobenius(h: &[[f64; 2]; 2]) -> f64 {
    h.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Three points `p1, p2` and their midpoint with the function values there.
/// `margin = ½(E(p1) + E(p2)) − E(mid)`; negative means convexity fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MidpointTriple {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub mid: (f64, f64),
    pub values: [f64; 3],
    pub margin: f64,
    pub relative_margin: f64,
}

impl MidpointTriple {
    fn evaluate(p1: (f64, f64), p2: (f64, f64), mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<Self> {
        let mid = (0.5 * (p1.0 + p2.0), 0.5 * (p1.1 + p2.1));
        let values = [f(p1.0, p1.1)?, f(p2.0, p2.1)?, f(mid.0, mid.1)?];
        let margin = 0.5 * (values[0] + values[1]) - values[2];
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(Self { p1, p2, mid, values, margin, relative_margin: margin / scale })
    }

    pub fn violates(&self, tolerance: f64) -> bool {
        self.relative_margin < -tolerance
    }
}

/// Closed-form versus central-difference Hessian at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    pub t: f64,
    pub s: f64,
    pub closed_form: [[f64; 2]; 2],
    pub finite_difference: [[f64; 2]; 2],
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub lambda: f64,
    pub sigma: f64,
    pub n: usize,
    /// Deterministic seed vectors tried before `c` cleared the degeneracy floor.
    pub attempts: usize,
    /// Constants for unit weights (`α = 1, β = ½`).
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Constants for the body-normalized full functional on this grid.
    pub body: RankTwoCoefficients,
    pub witness_t: f64,
    pub witness_s: f64,
    pub hessian: [[f64; 2]; 2],
    pub det_at_witness: f64,
    pub trace_at_witness: f64,
    pub scanned_points: usize,
    pub negative_det_points: usize,
    pub min_trace: f64,
    /// Midpoint violation of the unit-weight `E'`.
    pub midpoint_pair: MidpointTriple,
    /// Midpoint violation of the body-normalized full functional, evaluated
    /// through dense operators.
    pub e_full_midpoint: MidpointTriple,
    /// `σ/Λ + c`, the lower bound the construction guarantees for `a` and `b`.
    pub coef_bound: f64,
    pub coef_check: [bool; 2],
    pub hessian_checks: Vec<HessianCheck>,
    /// Largest relative gap between `4(E(z_ts) − E(0))` (unit weights, dense
    /// evaluation) and `E'(t, s)`.
    pub decomposition_defect: f64,
}

impl CounterexampleReport {
    /// Negative determinant found and both midpoint tests violated.
    pub fn exhibits_nonconvexity(&self) -> bool {
        self.det_at_witness < 0.0 && self.midpoint_pair.margin < 0.0 && self.e_full_midpoint.margin < 0.0
    }
}

/// `ψ, φ` and the constants derived from them.
pub(crate) struct Construction {
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
    pub attempts: usize,
}

impl Construction {
    pub fn coefficients(&self, grid: &MomentumGrid, alpha: f64, beta: f64) -> RankTwoCoefficients {
        let absk = grid.abs_k();
        let quad = |v: &DVector<f64>, w: &DVector<f64>, sym: &DVector<f64>| -> f64 {
            (0..v.len()).map(|i| v[i] * sym[i] * w[i]).sum()
        };
        let k2 = absk.map(|k| k * k);
        let diag_term = |v: &DVector<f64>| {
            let mut x = quad(v, v, &k2);
            for nu in 0..3 {
                x -= quad(v, v, grid.k_comp(nu)).powi(2);
            }
            x
        };
        let cross: f64 = (0..3).map(|nu| quad(&self.psi, &self.phi, grid.k_comp(nu)).powi(2)).sum();
        RankTwoCoefficients {
            a: alpha * quad(&self.psi, &self.psi, absk) + beta * diag_term(&self.psi),
            b: alpha * quad(&self.phi, &self.phi, absk) + beta * diag_term(&self.phi),
            c: beta * cross,
        }
    }

    /// `t|ψ⟩⟨ψ| + s|φ⟩⟨φ|`.
    pub fn operator(&self, t: f64, s: f64) -> SymOperator {
        SymOperator::from_matrix(&self.psi * self.psi.transpose() * t + &self.phi * self.phi.transpose() * s)
    }
}

/// Removes the components along the orthonormal `basis`, twice for stability.
fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

fn orthonormalize(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        let scale = w.norm();
        project_out(&mut w, &basis);
        let norm = w.norm();
        if norm > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            basis.push(w / norm);
        }
    }
    basis
}

pub(crate) fn construct(grid: &MomentumGrid, eta: &CoeffVector) -> Result<Construction> {
    if grid.dim() < 8 {
        return Err(Error::InvalidConfig(format!("counterexample needs dimension >= 8, got {}", grid.dim())));
    }
    let shifted = grid.shifted_couplings(eta)?;
    let span = orthonormalize(&shifted);
    let mut best = 0.0f64;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt as u64);
        let mut psi = gaussian_vector(&mut rng, grid.dim(), 1.0);
        project_out(&mut psi, &span);
        psi.normalize_mut();
        // Pushing ψ by k₃ keeps ⟨k₃ψ, φ⟩ of the order of ‖k₃ψ‖.
        let mut phi = psi.component_mul(grid.k_comp(2));
        let mut against = span.clone();
        against.push(psi.clone());
        project_out(&mut phi, &against);
        phi.normalize_mut();
        let candidate = Construction { psi, phi, attempts: attempt + 1 };
        let c = candidate.coefficients(grid, 1.0, 0.5).c;
        if c.is_finite() && c >= MIN_COUPLING {
            return Ok(candidate);
        }
        best = best.max(c);
    }
    Err(Error::DegenerateConstruction { attempts: MAX_ATTEMPTS, coupling: best })
}

struct ScanPoint {
    t: f64,
    s: f64,
    det: f64,
    trace: f64,
}

/// `t ∈ {2⁰, …, 2¹²}`, `s ∈ {0} ∪ {2⁻¹⁰, …, 2⁰}`.
fn scan(k: &RankTwoCoefficients) -> Vec<ScanPoint> {
    let ts: Vec<f64> = (0..=12).map(|e| 2f64.powi(e)).collect();
    let ss: Vec<f64> = std::iter::once(0.0).chain((-10..=0).map(|e| 2f64.powi(e))).collect();
    let mut out = Vec::with_capacity(ts.len() * ss.len());
    for &t in &ts {
        for &s in &ss {
            let h = closed_form_hessian(k, t, s);
            out.push(ScanPoint { t, s, det: det(&h), trace: h[0][0] + h[1][1] });
        }
    }
    out
}

/// Scan point with the most negative determinant, preferring `s > 0` so the
/// midpoint test can step both ways.
fn pick_witness(points: &[ScanPoint]) -> Option<(f64, f64)> {
    let best = |interior: bool| {
        points
            .iter()
            .filter(|p| p.det < 0.0 && (!interior || p.s > 0.0))
            .min_by(|x, y| x.det.total_cmp(&y.det))
            .map(|p| (p.t, p.s))
    };
    best(true).or_else(|| best(false))
}

/// Unit eigenvector of the smallest eigenvalue, oriented so that both
/// coordinates of `p ± h v` stay feasible for the largest possible `h`.
fn descent_direction(h: &[[f64; 2]; 2]) -> (f64, f64) {
    let m = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
    let eig = SymmetricEigen::new(m);
    let i = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    let v = eig.eigenvectors.column(i);
    let (mut vt, mut vs) = (v[0], v[1]);
    if vs < 0.0 || (vs == 0.0 && vt < 0.0) {
        vt = -vt;
        vs = -vs;
    }
    (vt, vs)
}

/// Searches step sizes `h = h_max 2^{-j}` around `(t0, s0)` along the
/// negative-curvature direction until `f` violates midpoint convexity by more
/// than `tolerance` (relative). Returns the most violating triple seen.
fn find_midpoint_violation(
    k: &RankTwoCoefficients,
    t0: f64,
    s0: f64,
    tolerance: f64,
    max_halvings: usize,
    mut f: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<MidpointTriple> {
    let h = closed_form_hessian(k, t0, s0);
    let (vt, vs) = descent_direction(&h);
    let reach = |x: f64, v: f64| if v.abs() > 0.0 { x / v.abs() } else { f64::INFINITY };
    let h_max = reach(t0, vt).min(reach(s0, vs)).min(t0.max(1.0));
    let mut best: Option<MidpointTriple> = None;
    for j in 0..max_halvings {
        let triple = if h_max > 0.0 {
            let step = 0.999 * h_max * 0.5f64.powi(j as i32);
            MidpointTriple::evaluate((t0 - step * vt, s0 - step * vs), (t0 + step * vt, s0 + step * vs), &mut f)?
        } else {
            // On the boundary s = 0: step one-sidedly into the feasible set.
            let step = 0.5f64.powi(j as i32).min(t0);
            MidpointTriple::evaluate((t0, s0), (t0 + 2.0 * step * vt, s0 + 2.0 * step * vs), &mut f)?
        };
        let better = best.as_ref().is_none_or(|b| triple.relative_margin < b.relative_margin);
        let done = triple.violates(tolerance);
        if better {
            best = Some(triple);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one step is evaluated"))
}

fn finite_difference_hessian(k: &RankTwoCoefficients, t: f64, s: f64) -> [[f64; 2]; 2] {
    let f = |t: f64, s: f64| rank_two_energy(k, t, s);
    let central = |scale: f64| {
        let ht = scale * (1.0 + t);
        let hs = scale * (1.0 + s);
        let h11 = (f(t + ht, s) - 2.0 * f(t, s) + f(t - ht, s)) / (ht * ht);
        let h22 = (f(t, s + hs) - 2.0 * f(t, s) + f(t, s - hs)) / (hs * hs);
        let h12 = (f(t + ht, s + hs) - f(t + ht, s - hs) - f(t - ht, s + hs) + f(t - ht, s - hs)) / (4.0 * ht * hs);
        [h11, h12, h22]
    };
    // Richardson step cancels the O(h²) term.
    let (coarse, fine) = (central(2e-3), central(1e-3));
    let r: Vec<f64> = (0..3).map(|i| (4.0 * fine[i] - coarse[i]) / 3.0).collect();
    [[r[0], r[1]], [r[1], r[2]]]
}

/// Builds the rank-two family for the given `η`, scans the closed-form
/// Hessian for a negative determinant and produces concrete midpoint
/// violations of `E'` and of the body-normalized full functional.
pub fn build_counterexample(grid: &MomentumGrid, eta: &CoeffVector) -> Result<CounterexampleReport> {
    let cons = construct(grid, eta)?;
    let unit = cons.coefficients(grid, 1.0, 0.5);
    let body_w = TermWeights::for_grid(grid, Normalization::Body);
    let body = cons.coefficients(grid, body_w.field_trace, body_w.nonconvex);
    let cfg = grid.config();

    let points = scan(&unit);
    let (witness_t, witness_s) =
        pick_witness(&points).ok_or(Error::DegenerateConstruction { attempts: cons.attempts, coupling: unit.c })?;
    let hessian = closed_form_hessian(&unit, witness_t, witness_s);
    let midpoint_pair =
        find_midpoint_violation(&unit, witness_t, witness_s, 1e-12, 60, |t, s| Ok(rank_two_energy(&unit, t, s)))?;

    // Full functional: locate the step with the body constants, then confirm
    // with dense evaluations.
    let body_points = scan(&body);
    let (bt, bs) = pick_witness(&body_points)
        .ok_or(Error::DegenerateConstruction { attempts: cons.attempts, coupling: body.c })?;
    let probe = find_midpoint_violation(&body, bt, bs, 1e-9, 60, |t, s| Ok(rank_two_energy(&body, t, s)))?;
    let dense = |t: f64, s: f64| -> Result<f64> {
        Ok(evaluate_with_weights(grid, &cons.operator(t, s), eta, &body_w, true)?.iter().sum())
    };
    let mut e_full_midpoint = MidpointTriple::evaluate(probe.p1, probe.p2, dense)?;
    if !e_full_midpoint.violates(1e-12) {
        // Rounding swamped the closed-form step; search directly.
        e_full_midpoint = find_midpoint_violation(&body, bt, bs, 1e-10, 30, dense)?;
    }

    let unit_w = TermWeights::unweighted();
    let zero = SymOperator::zeros(grid.dim());
    let base: f64 = evaluate_with_weights(grid, &zero, eta, &unit_w, true)?.iter().sum();
    let mut decomposition_defect = 0.0f64;
    for (t, s) in [(witness_t, witness_s), (4.0, 0.25), (1.0, 0.5)] {
        let value: f64 = evaluate_with_weights(grid, &cons.operator(t, s), eta, &unit_w, true)?.iter().sum();
        let reduced = rank_two_energy(&unit, t, s);
        decomposition_defect = decomposition_defect.max((4.0 * (value - base) - reduced).abs() / reduced.abs());
    }

    let hessian_checks = [(witness_t, witness_s), (4.0, 0.25), (1.0, 0.5), (16.0, 0.125), (2.0, 1.0)]
        .into_iter()
        .map(|(t, s)| {
            let closed_form = closed_form_hessian(&unit, t, s);
            let finite_difference = finite_difference_hessian(&unit, t, s);
            let diff = [
                [closed_form[0][0] - finite_difference[0][0], closed_form[0][1] - finite_difference[0][1]],
                [closed_form[1][0] - finite_difference[1][0], closed_form[1][1] - finite_difference[1][1]],
            ];
            HessianCheck {
                t,
                s,
                closed_form,
                finite_difference,
                relative_error: frobenius(&diff) / frobenius(&closed_form),
            }
        })
        .collect();

    let coef_bound = cfg.sigma / cfg.lambda + unit.c;
    Ok(CounterexampleReport {
        lambda: cfg.lambda,
        sigma: cfg.sigma,
        n: grid.dim(),
        attempts: cons.attempts,
        a: unit.a,
        b: unit.b,
        c: unit.c,
        body,
        witness_t,
        witness_s,
        hessian,
        det_at_witness: det(&hessian),
        trace_at_witness: hessian[0][0] + hessian[1][1],
        scanned_points: points.len(),
        negative_det_points: points.iter().filter(|p| p.det < 0.0).count(),
        min_trace: points.iter().map(|p| p.trace).fold(f64::INFINITY, f64::min),
        midpoint_pair,
        e_full_midpoint,
        coef_bound,
        coef_check: [unit.a >= coef_bound, unit.b >= coef_bound],
        hessian_checks,
        decomposition_defect,
    })
}

/// Random step along a negative-curvature direction of the body constants,
/// used to seed midpoint tests of the full functional.
pub(crate) fn aligned_pair(body: &RankTwoCoefficients, rng: &mut ChaCha8Rng) -> Option<((f64, f64), (f64, f64))> {
    use rand::Rng;
    let candidates: Vec<ScanPoint> = scan(body).into_iter().filter(|p| p.det < 0.0 && p.s > 0.0).collect();
    if candidates.is_empty() {
        return None;
    }
    let p = &candidates[rng.random_range(0..candidates.len())];
    let (vt, vs) = descent_direction(&closed_form_hessian(body, p.t, p.s));
    let reach = |x: f64, v: f64| if v.abs() > 0.0 { x / v.abs() } else { f64::INFINITY };
    let h = rng.random_range(0.05..0.95) * reach(p.t, vt).min(reach(p.s, vs)).min(p.t);
    Some(((p.t - h * vt, p.s - h * vs), (p.t + h * vt, p.s + h * vs)))
}
