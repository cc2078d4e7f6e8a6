//! Trace inequalities for `(A² + B²)^{1/2} − B` and operator convexity facts.

use super::{log_uniform, random_psd, run_trials, trial_rng, with_spectrum, PropertyReport};
use crate::operator::{psd_sqrt, trace_root_gap, SymOperator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SLACK: f64 = 1e-9;

fn inverse(m: &SymOperator) -> SymOperator {
    let chol = m.matrix().clone().cholesky().expect("positive definite input");
    SymOperator::from_matrix(chol.inverse())
}

/// PSD operator with unit trace.
fn unit_trace_psd(rng: &mut ChaCha8Rng, dim: usize) -> SymOperator {
    let a = random_psd(rng, dim);
    let t = a.trace();
    a.scale(1.0 / t)
}

/// `(A² + B²)^{1/2} − B` as an operator.
fn root_gap_operator(a: &SymOperator, b: &SymOperator) -> SymOperator {
    let sum = &a.square() + &b.square();
    &psd_sqrt(&sum).expect("sum of squares is PSD") - b
}

/// `0 ≤ Tr[(A² + B²)^{1/2} − B] ≤ Tr[A]` with `Tr A = 1`.
/// Margin: `min(Tr A − gap, gap)`.
pub fn verify_trace_upper(dim: usize, trials: usize, seed: u64) -> PropertyReport {
    run_trials("trace_upper", trials, seed, SLACK, true, |rng, _| {
        let a = unit_trace_psd(rng, dim);
        let b = random_psd(rng, dim);
        let gap = trace_root_gap(&a, &b).expect("PSD inputs");
        (a.trace() - gap).min(gap)
    })
}

/// `|Tr A − Tr[(A² + (sB)²)^{1/2} − sB]|` for one random pair; tends to 0 with `s`.
pub fn trace_upper_limit(dim: usize, seed: u64, scale: f64) -> f64 {
    let mut rng = trial_rng(seed, 0);
    let a = unit_trace_psd(&mut rng, dim);
    let b = random_psd(&mut rng, dim).scale(scale);
    (a.trace() - trace_root_gap(&a, &b).expect("PSD inputs")).abs()
}

/// `Tr[(A²+C²)^{1/2} − C] ≤ Tr[(A²+B²)^{1/2} − B]` for `B² ⪯ C²`, built as
/// `C = (B² + D)^{1/2}` with random PSD `D`, together with the shifted
/// operator inequality at `ε = 0.1`. Margin: the smaller of the two slacks.
pub fn verify_trace_monotone(dim: usize, trials: usize, seed: u64) -> PropertyReport {
    run_trials("trace_monotone", trials, seed, SLACK, true, |rng, _| {
        let a = unit_trace_psd(rng, dim);
        let b = random_psd(rng, dim);
        let d = random_psd(rng, dim);
        let c = psd_sqrt(&(&b.square() + &d)).expect("PSD");
        let trace_margin = trace_root_gap(&a, &b).expect("PSD") - trace_root_gap(&a, &c).expect("PSD");
        trace_margin.min(shift_margin(&a, &b, 0.1))
    })
}

/// `|gap(A, B) − gap(A, C)|` with `C² = B² + tD`; tends to 0 with `t`.
pub fn trace_monotone_limit(dim: usize, seed: u64, t: f64) -> f64 {
    let mut rng = trial_rng(seed, 0);
    let a = unit_trace_psd(&mut rng, dim);
    let b = random_psd(&mut rng, dim);
    let d = random_psd(&mut rng, dim).scale(t);
    let c = psd_sqrt(&(&b.square() + &d)).expect("PSD");
    (trace_root_gap(&a, &b).expect("PSD") - trace_root_gap(&a, &c).expect("PSD")).abs()
}

/// Smallest eigenvalue of
/// `[(A²+B²)^{1/2} − B] − [(A²+B²+ε)^{1/2} − (B²+ε)^{1/2}]`.
fn shift_margin(a: &SymOperator, b: &SymOperator, eps: f64) -> f64 {
    let plain = root_gap_operator(a, b);
    let sum = (&a.square() + &b.square()).shift(eps);
    let shifted = &psd_sqrt(&sum).expect("PSD") - &psd_sqrt(&b.square().shift(eps)).expect("PSD");
    (&plain - &shifted).min_eigenvalue()
}

/// Operator inequality
/// `(A²+B²+ε)^{1/2} − (B²+ε)^{1/2} ⪯ (A²+B²)^{1/2} − B` on random pairs.
pub fn verify_shift_monotone(dim: usize, trials: usize, seed: u64, eps: f64) -> PropertyReport {
    run_trials("shift_monotone", trials, seed, SLACK, true, |rng, _| {
        let a = unit_trace_psd(rng, dim);
        let b = random_psd(rng, dim);
        shift_margin(&a, &b, eps)
    })
}

/// Scalar slack of the shifted inequality with a bare `(b² + ε)` in place of
/// its square root: `(√(a²+b²) − b) − (√(a²+b²+ε) − (b²+ε))`. Negative values
/// show that form cannot hold.
pub fn printed_shift_margin(a: f64, b: f64, eps: f64) -> f64 {
    ((a * a + b * b).sqrt() - b) - ((a * a + b * b + eps).sqrt() - (b * b + eps))
}

/// `λA^{-1} + (1−λ)B^{-1} − [λA + (1−λ)B]^{-1}`.
pub fn inverse_convexity_gap(a: &SymOperator, b: &SymOperator, lambda: f64) -> SymOperator {
    let mix = &a.scale(lambda) + &b.scale(1.0 - lambda);
    &(&inverse(a).scale(lambda) + &inverse(b).scale(1.0 - lambda)) - &inverse(&mix)
}

/// Strict operator convexity of the inverse. Margin: smallest eigenvalue of
/// the gap over the larger inverse norm; a gap with norm `≤ 1e-10` counts as
/// a violation of strictness.
pub fn verify_inverse_convexity(dim: usize, trials: usize, seed: u64) -> PropertyReport {
    run_trials("inverse_convexity", trials, seed, SLACK, true, |rng, _| {
        let a = random_psd(rng, dim);
        let b = random_psd(rng, dim);
        let lambda = rng.random_range(0.01..0.99);
        let gap = inverse_convexity_gap(&a, &b, lambda);
        if gap.hs_norm() <= 1e-10 {
            return -1.0;
        }
        let scale = inverse(&a).op_norm().max(inverse(&b).op_norm());
        gap.min_eigenvalue() / scale
    })
}

/// `A B^{-1} A ⪯ A` for `0 ⪯ A ⪯ B`, `B` invertible. Margin normalized by `‖A‖`.
pub fn verify_aba(dim: usize, trials: usize, seed: u64) -> PropertyReport {
    run_trials("aba_inequality", trials, seed, SLACK, true, |rng, _| {
        let a = random_psd(rng, dim);
        let b = &a + &random_psd(rng, dim);
        let aba = a.sandwich(&inverse(&b));
        (&a - &aba).min_eigenvalue() / a.op_norm()
    })
}

/// `A ⪯ B ⇒ A^{1/2} ⪯ B^{1/2}`. Margin normalized by `max(‖B^{1/2}‖, 1)`.
pub fn verify_root_monotone(dim: usize, trials: usize, seed: u64) -> PropertyReport {
    run_trials("root_monotone", trials, seed, SLACK, true, |rng, _| {
        let a = random_psd(rng, dim);
        // Nearly singular increments probe the boundary of the order.
        let spectrum: Vec<f64> =
            (0..dim).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { log_uniform(rng, 1e-6, 1.0) }).collect();
        let b = &a + &with_spectrum(rng, &spectrum);
        let rb = psd_sqrt(&b).expect("PSD");
        (&rb - &psd_sqrt(&a).expect("PSD")).min_eigenvalue() / rb.op_norm().max(1.0)
    })
}
