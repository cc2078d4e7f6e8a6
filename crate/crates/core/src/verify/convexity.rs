//! Midpoint convexity and coercivity of the functionals on a grid.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::counterexample::{aligned_pair, construct};
use super::{gaussian_vector, log_uniform, run_trials, with_spectrum, PropertyReport};
use crate::functional::{e_full, g_energy, interaction_form, Normalization, TermWeights};
use crate::grid::MomentumGrid;
use crate::operator::SymOperator;

const SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvexityTarget {
    /// The reduced functional `G`.
    G,
    /// `(z, η) ↦ ⟨η, (1+z)^{-1} η⟩` alone.
    Interaction,
    /// The full functional `E`, expected to fail.
    E,
}

impl FromStr for ConvexityTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(Self::G),
            "interaction" => Ok(Self::Interaction),
            "e" => Ok(Self::E),
            other => Err(format!("unknown convexity target {other:?}")),
        }
    }
}

impl fmt::Display for ConvexityTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::G => "g",
            Self::Interaction => "interaction",
            Self::E => "e",
        })
    }
}

/// Random `(z, η)` with `z ⪰ −0.2` (inside the default `HS_ε`) and `η`
/// Gaussian. Roughly a sixth of the spectrum is negative.
pub fn random_feasible_pair(grid: &MomentumGrid, rng: &mut ChaCha8Rng) -> (SymOperator, DVector<f64>) {
    let n = grid.dim();
    let spectrum: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.15 { -0.2 * rng.random::<f64>() } else { log_uniform(rng, 1e-3, 3.0) })
        .collect();
    let z = with_spectrum(rng, &spectrum);
    let eta = gaussian_vector(rng, n, 1.0 / (n as f64).sqrt());
    (z, eta)
}

fn relative_midpoint_margin(values: [f64; 3]) -> f64 {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (0.5 * (values[0] + values[1]) - values[2]) / scale
}

/// Midpoint convexity on random pairs. For `E`, even-numbered trials use
/// pairs along a negative-curvature direction of the rank-two family, odd
/// trials use random pairs; violations are the expected outcome.
pub fn verify_convexity(grid: &MomentumGrid, trials: usize, seed: u64, which: ConvexityTarget) -> PropertyReport {
    let norm = Normalization::Body;
    let name = format!("convexity_{which}");
    let mid = |a: &(SymOperator, DVector<f64>), b: &(SymOperator, DVector<f64>)| {
        (&a.0.scale(0.5) + &b.0.scale(0.5), (&a.1 + &b.1) * 0.5)
    };
    match which {
        ConvexityTarget::G | ConvexityTarget::Interaction => run_trials(&name, trials, seed, SLACK, true, |rng, _| {
            let x1 = random_feasible_pair(grid, rng);
            let x2 = random_feasible_pair(grid, rng);
            let m = mid(&x1, &x2);
            let f = |x: &(SymOperator, DVector<f64>)| match which {
                ConvexityTarget::G => g_energy(grid, &x.0, &x.1, norm).map(|e| e.total),
                _ => interaction_form(&x.0, &x.1),
            };
            match (f(&x1), f(&x2), f(&m)) {
                (Ok(a), Ok(b), Ok(c)) => relative_midpoint_margin([a, b, c]),
                _ => f64::NAN,
            }
        }),
        ConvexityTarget::E => {
            let eta = DVector::zeros(grid.dim());
            let cons = construct(grid, &eta).ok();
            let w = TermWeights::for_grid(grid, norm);
            let body = cons.as_ref().map(|c| c.coefficients(grid, w.field_trace, w.nonconvex));
            run_trials(&name, trials, seed, 1e-12, false, |rng, i| {
                let pair = match (&cons, &body) {
                    (Some(cons), Some(body)) if i % 2 == 0 => aligned_pair(body, rng)
                        .map(|(p, q)| ((cons.operator(p.0, p.1), eta.clone()), (cons.operator(q.0, q.1), eta.clone()))),
                    _ => None,
                };
                let (x1, x2) =
                    pair.unwrap_or_else(|| (random_feasible_pair(grid, rng), random_feasible_pair(grid, rng)));
                let m = mid(&x1, &x2);
                let f = |x: &(SymOperator, DVector<f64>)| e_full(grid, &x.0, &x.1, norm).map(|e| e.total);
                match (f(&x1), f(&x2), f(&m)) {
                    (Ok(a), Ok(b), Ok(c)) => relative_midpoint_margin([a, b, c]),
                    _ => f64::NAN,
                }
            })
        }
    }
}

/// `G(z, η) ≥ σ·½ min(‖z‖, ‖z‖²) + 4σ‖η‖²` (body normalization) over samples
/// with `‖z‖_HS` spread log-uniformly up to `10³`, including pure-`z` and
/// pure-`η` samples. Margin: `(G − bound) / max(G, 1)`.
pub fn verify_coercivity(grid: &MomentumGrid, trials: usize, seed: u64) -> PropertyReport {
    let sigma = grid.config().sigma;
    let n = grid.dim();
    run_trials("coercivity", trials, seed, SLACK, true, |rng, i| {
        let target_norm = log_uniform(rng, 1e-3, 1e3);
        let z = match i % 3 {
            1 => SymOperator::zeros(n),
            _ => {
                // Large samples must stay PSD so scaling keeps them feasible.
                let allow_negative = target_norm < 1.0;
                let spectrum: Vec<f64> = (0..n)
                    .map(|_| {
                        if allow_negative && rng.random::<f64>() < 0.15 {
                            -rng.random::<f64>()
                        } else {
                            log_uniform(rng, 1e-3, 1.0)
                        }
                    })
                    .collect();
                let z = with_spectrum(rng, &spectrum);
                let z = z.scale(target_norm / z.hs_norm());
                if z.min_eigenvalue() < -0.2 {
                    z.scale(0.2 / -z.min_eigenvalue())
                } else {
                    z
                }
            }
        };
        let eta = match i % 3 {
            2 => DVector::zeros(n),
            _ => {
                let e = gaussian_vector(rng, n, 1.0);
                &e * (log_uniform(rng, 1e-3, 10.0) / e.norm())
            }
        };
        let value = match g_energy(grid, &z, &eta, Normalization::Body) {
            Ok(e) => e.total,
            Err(_) => return f64::NAN,
        };
        let hs = z.hs_norm();
        let bound = sigma * 0.5 * hs.min(hs * hs) + 4.0 * sigma * eta.norm_squared();
        (value - bound) / value.abs().max(1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;

    fn small_grid(g: f64) -> MomentumGrid {
        MomentumGrid::build(&GridConfig::new(4.0, 0.1, g, (2, 2, 4))).unwrap()
    }

    #[test]
    fn g_and_interaction_are_midpoint_convex() {
        let grid = small_grid(1.0);
        for which in [ConvexityTarget::G, ConvexityTarget::Interaction] {
            let r = verify_convexity(&grid, 40, 3, which);
            assert_eq!(r.violations, 0, "{r:?}");
            assert!(r.worst_margin > 1e-12, "{r:?}");
        }
    }

    #[test]
    fn full_functional_fails_midpoint_convexity() {
        let grid = small_grid(1.0);
        let r = verify_convexity(&grid, 20, 3, ConvexityTarget::E);
        assert!(r.violations > 0, "{r:?}");
        assert!(!r.is_unexpected());
    }

    #[test]
    fn coercivity_holds() {
        let grid = small_grid(1.0);
        let r = verify_coercivity(&grid, 60, 4);
        assert_eq!(r.violations, 0, "{r:?}");
    }

    #[test]
    fn coercivity_at_the_free_origin_is_tight() {
        let grid = small_grid(0.0);
        let n = grid.dim();
        let g = g_energy(&grid, &SymOperator::<f64>::zeros(n), &DVector::zeros(n), Normalization::Body).unwrap();
        assert_eq!(g.total, 0.0);
        let eta = DVector::from_element(n, 0.3);
        let g = g_energy(&grid, &SymOperator::<f64>::zeros(n), &eta, Normalization::Body).unwrap();
        assert!(g.total >= 4.0 * 0.1 * eta.norm_squared());
    }

    #[test]
    fn target_names_round_trip() {
        for t in [ConvexityTarget::G, ConvexityTarget::Interaction, ConvexityTarget::E] {
            assert_eq!(t.to_string().parse::<ConvexityTarget>().unwrap(), t);
        }
    }
}
