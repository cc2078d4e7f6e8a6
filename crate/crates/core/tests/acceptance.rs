//! Acceptance run: each criterion prints one PASS/FAIL line with the measured
//! numbers; the process exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use bhf_core::solver::worst_ascent;
use bhf_core::sweep::{derived_upper_constant, lower_constant, stated_upper_constant};
use bhf_core::verify::{
    build_counterexample, random_feasible_pair, trace_monotone_limit, trace_upper_limit, trial_rng, verify_convexity,
    verify_trace_monotone, verify_trace_upper, ConvexityTarget,
};
use bhf_core::{
    eta_star, fit_upper_half, g_energy, grad_eta, grad_z, minimize, minimize_from, reduced_energy, run_sweep,
    scaling_identity_check, stationarity_residual, z_star, CoeffVector, GridConfig, MomentumGrid, Normalization,
    SolveConfig, SweepConfig, SweepRecord, SymOperator,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grid(lambda: f64, sigma: f64, dims: (usize, usize, usize)) -> MomentumGrid {
    MomentumGrid::build(&GridConfig::new(lambda, sigma, 1.0, dims)).expect("valid grid")
}

fn ratio_at(records: &[SweepRecord], lambda: f64) -> &SweepRecord {
    records.iter().find(|r| r.lambda == lambda).expect("lambda in sweep")
}

fn sweep() -> Vec<SweepRecord> {
    let config = SweepConfig {
        lambdas: vec![8.0, 16.0, 32.0, 64.0, 128.0],
        g: 1.0,
        sigma: 0.1,
        dims: (8, 8, 8),
        ..SweepConfig::default()
    };
    run_sweep(&config).expect("sweep runs")
}

fn scaling_exponent(records: &[SweepRecord]) -> Outcome {
    let fit = fit_upper_half(records).map_err(|e| e.to_string())?;
    check(
        (1.45..=1.55).contains(&fit.exponent),
        format!(
            "slope {:.4} over lambda in [{}, {}] ({} points, r^2 = {:.6})",
            fit.exponent, fit.lambda_range.0, fit.lambda_range.1, fit.points, fit.r_squared
        ),
    )
}

fn lower_bound(records: &[SweepRecord]) -> Outcome {
    let floor = lower_constant() * (1.0 - 0.02);
    let worst = records.iter().map(|r| r.min_ratio()).fold(f64::INFINITY, f64::min);
    let ratios: Vec<String> = records.iter().map(|r| format!("{:.3}", r.min_ratio())).collect();
    check(worst >= floor, format!("E_min/(g L^1.5) = [{}], floor {floor:.4}", ratios.join(", ")))
}

fn trial_constant(records: &[SweepRecord]) -> Outcome {
    let r = ratio_at(records, 128.0).trial_ratio();
    let rel = (r / derived_upper_constant() - 1.0).abs();
    check(
        rel <= 0.03,
        format!(
            "E_trial/(g L^1.5) at L=128 is {r:.4}; 8 sqrt(pi) = {:.4} (off by {:.2}%); 4 sqrt(3 pi) = {:.4} exceeded: {}",
            derived_upper_constant(),
            100.0 * rel,
            stated_upper_constant(),
            r > stated_upper_constant()
        ),
    )
}

fn closed_forms() -> Outcome {
    let grids = [grid(4.0, 0.1, (2, 4, 4)), grid(16.0, 0.1, (4, 4, 4)), grid(64.0, 0.1, (4, 4, 8))];
    let (mut worst_z, mut worst_eta, mut worst_red) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let g = &grids[i % grids.len()];
        let norm = if i % 2 == 0 { Normalization::Body } else { Normalization::Intro };
        let mut rng = trial_rng(4, i);
        let (z, eta) = random_feasible_pair(g, &mut rng);
        let zs = z_star(g, &eta).map_err(|e| e.to_string())?;
        worst_z = worst_z.max(stationarity_residual(g, &zs, &eta, norm).map_err(|e| e.to_string())?.0);
        let es = eta_star(g, &z).map_err(|e| e.to_string())?;
        worst_eta = worst_eta.max(stationarity_residual(g, &z, &es, norm).map_err(|e| e.to_string())?.1);
        let red = reduced_energy(g, &eta, norm).map_err(|e| e.to_string())?;
        let full = g_energy(g, &zs, &eta, norm).map_err(|e| e.to_string())?.total;
        worst_red = worst_red.max((red - full).abs() / full.abs());
    }
    check(
        worst_z <= 1e-8 && worst_eta <= 1e-9 && worst_red <= 1e-8,
        format!("z_star residual {worst_z:.2e}, eta_star residual {worst_eta:.2e}, reduced-energy gap {worst_red:.2e}"),
    )
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymOperator {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = SymOperator::from_matrix(m);
    s.scale(1.0 / s.hs_norm())
}

fn gradient_fidelity() -> Outcome {
    let grids = [grid(5.0, 0.1, (2, 4, 4)), grid(12.0, 0.1, (4, 4, 4))];
    let delta = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let g = &grids[i % grids.len()];
        let n = g.dim();
        let norm = if i % 2 == 0 { Normalization::Body } else { Normalization::Intro };
        let mut rng = trial_rng(5, i);
        let (z, eta) = random_feasible_pair(g, &mut rng);
        let energy = |z: &SymOperator, eta: &CoeffVector| g_energy(g, z, eta, norm).expect("feasible").total;

        let gz = grad_z(g, &z, &eta, norm).map_err(|e| e.to_string())?;
        let ge = grad_eta(g, &z, &eta, norm).map_err(|e| e.to_string())?;
        // Odd points probe along the gradient itself, even points along a random direction.
        let dz = if i % 4 < 2 { gz.scale(1.0 / gz.hs_norm()) } else { random_symmetric(&mut rng, n) };
        let de = if i % 4 < 2 {
            ge.normalize()
        } else {
            DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize()
        };
        let fd_z = (energy(&(&z + &dz.scale(delta)), &eta) - energy(&(&z - &dz.scale(delta)), &eta)) / (2.0 * delta);
        let an_z = gz.hs_inner(&dz);
        worst = worst.max((fd_z - an_z).abs() / an_z.abs().max(gz.hs_norm()));
        let fd_e = (energy(&z, &(&eta + &de * delta)) - energy(&z, &(&eta - &de * delta))) / (2.0 * delta);
        let an_e = ge.dot(&de);
        worst = worst.max((fd_e - an_e).abs() / an_e.abs().max(ge.norm()));
    }
    check(worst <= 1e-6, format!("largest relative gap {worst:.2e} over 50 points (N <= 128)"))
}

fn trace_inequalities() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for dim in [4, 8, 16, 32] {
        for r in [verify_trace_upper(dim, 1000, 6), verify_trace_monotone(dim, 1000, 6)] {
            ok &= r.violations == 0;
            lines.push(format!("{}@{dim}: {} viol, worst {:.1e}", r.property_name, r.violations, r.worst_margin));
        }
    }
    let upper: Vec<f64> = [1e-2, 1e-4, 1e-6, 0.0].iter().map(|&s| trace_upper_limit(16, 6, s)).collect();
    let mono: Vec<f64> = [1e-2, 1e-4, 1e-6, 0.0].iter().map(|&t| trace_monotone_limit(16, 6, t)).collect();
    let shrinking = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]) && v[3] <= 1e-10;
    ok &= shrinking(&upper) && shrinking(&mono);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join(" ");
    lines.push(format!("B->0 margins [{}], C->B margins [{}]", fmt(&upper), fmt(&mono)));
    check(ok, lines.join("; "))
}

fn convexity_split() -> Outcome {
    let g = grid(4.0, 0.1, (2, 4, 4));
    let mut ok = true;
    let mut lines = Vec::new();
    for which in [ConvexityTarget::G, ConvexityTarget::Interaction] {
        let r = verify_convexity(&g, 500, 7, which);
        ok &= r.violations == 0;
        lines.push(format!("{}: {} violations", r.property_name, r.violations));
    }
    for (lambda, sigma, dims) in [
        (4.0, 0.1, (2, 4, 4)),
        (16.0, 0.1, (4, 4, 4)),
        (8.0, 0.3, (3, 4, 6)),
        (32.0, 0.1, (4, 6, 8)),
        (4.0, 0.1, (8, 8, 8)),
    ] {
        let g = grid(lambda, sigma, dims);
        let r = build_counterexample(&g, &DVector::zeros(g.dim())).map_err(|e| e.to_string())?;
        let shown = r.det_at_witness < 0.0 && r.e_full_midpoint.margin < 0.0;
        ok &= shown;
        lines.push(format!(
            "N={} L={lambda}: det {:.2e}, e_full midpoint margin {:.2e}",
            g.dim(),
            r.det_at_witness,
            r.e_full_midpoint.margin
        ));
    }
    check(ok, lines.join("; "))
}

fn counterexample_hessian() -> Outcome {
    let g = grid(16.0, 0.1, (4, 4, 4));
    let r = build_counterexample(&g, &DVector::zeros(g.dim())).map_err(|e| e.to_string())?;
    let worst = r.hessian_checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    check(
        r.hessian_checks.len() >= 5 && worst <= 1e-6 && r.min_trace > 0.0,
        format!(
            "{} FD comparisons, worst relative error {worst:.2e}; min trace {:.3e} over {} scanned points",
            r.hessian_checks.len(),
            r.min_trace,
            r.scanned_points
        ),
    )
}

fn structural(records: &[SweepRecord]) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();

    let mut scaling = 0.0f64;
    for (lambda, dims) in [(8.0, (4, 4, 4)), (40.0, (3, 4, 6)), (8.0, (8, 8, 8))] {
        let r = scaling_identity_check(&GridConfig::new(lambda, 0.1, 1.0, dims), 9).map_err(|e| e.to_string())?;
        scaling = scaling.max(r.max_relative_deviation);
    }
    ok &= scaling <= 1e-10;
    lines.push(format!("dilation deviation {scaling:.1e}"));

    let (mut j, mut ascent) = (0.0f64, f64::NEG_INFINITY);
    for (lambda, dims) in [(16.0, (4, 4, 4)), (64.0, (8, 8, 8))] {
        let g = grid(lambda, 0.1, dims);
        let res = minimize(&g, &SolveConfig::default(), Normalization::Body).map_err(|e| e.to_string())?;
        j = j.max(res.j_invariance_defect);
        ascent = ascent.max(worst_ascent(&res.energy_trajectory));
    }
    let descent_ok = records.iter().all(|r| r.e_min <= r.e_trial * (1.0 + 1e-9));
    ok &= j <= 1e-6 && ascent <= 1e-12 && descent_ok;
    lines.push(format!("J defect {j:.1e}, worst ascent {ascent:.1e}, sweep E_min <= E_trial: {descent_ok}"));

    let g = grid(4.0, 0.1, (2, 4, 4));
    let n = g.dim();
    let cfg = SolveConfig { tol_energy_rel: f64::MIN_POSITIVE, max_iters: 400, ..SolveConfig::default() };
    let mut runs = Vec::new();
    for s in 0..2 {
        let mut rng = trial_rng(10, s);
        let (z0, eta0) = random_feasible_pair(&g, &mut rng);
        let eta0 = eta0 * (3.0 + 2.0 * s as f64);
        runs.push(minimize_from(&g, z0, eta0, &cfg, Normalization::Body).map_err(|e| e.to_string())?);
    }
    let scale = runs[0].z.hs_norm().max(1.0);
    let dz = (&runs[0].z - &runs[1].z).hs_norm();
    let de = (&runs[0].eta - &runs[1].eta).norm();
    ok &= dz <= 1e-6 * scale && de <= 1e-6 * scale;
    lines.push(format!("two starts (N={n}): |dz| {dz:.1e}, |d eta| {de:.1e}, scale {scale:.2}"));
    check(ok, lines.join("; "))
}

/// Projection onto `z ⪰ floor` by eigenvalue clamping.
fn clamp_below(z: &SymOperator, floor: f64) -> SymOperator {
    let eig = z.matrix().clone().symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    SymOperator::from_matrix(v * DMatrix::from_diagonal(&clamped) * v.transpose())
}

/// Projected gradient descent on `z ↦ G(z, η)` with Barzilai–Borwein steps
/// and a monotone backtracking safeguard. Uses only the energy and its
/// gradient.
fn projected_gradient(g: &MomentumGrid, eta: &CoeffVector) -> f64 {
    let norm = Normalization::Body;
    let f = |z: &SymOperator| g_energy(g, z, eta, norm).map(|e| e.total).unwrap_or(f64::INFINITY);
    let grad = |z: &SymOperator| grad_z(g, z, eta, norm).expect("feasible");
    let mut z = SymOperator::zeros(g.dim());
    let mut fz = f(&z);
    let mut gz = grad(&z);
    let mut step = 1.0 / gz.op_norm().max(1.0);
    for _ in 0..20_000 {
        let (mut t, mut next, mut f_next) = (step, z.clone(), fz);
        for _ in 0..60 {
            next = clamp_below(&(&z - &gz.scale(t)), -0.5);
            f_next = f(&next);
            let d = &next - &z;
            if f_next <= fz + gz.hs_inner(&d) + d.hs_norm().powi(2) / (2.0 * t) {
                break;
            }
            t *= 0.5;
        }
        let g_next = grad(&next);
        let s = &next - &z;
        let y = &g_next - &gz;
        let sy = s.hs_inner(&y);
        step = if sy > 0.0 { s.hs_norm().powi(2) / sy } else { 2.0 * t };
        let done = (fz - f_next).abs() <= 1e-15 * fz.abs();
        z = next;
        fz = f_next;
        gz = g_next;
        if done {
            break;
        }
    }
    fz
}

fn oracle_equivalence() -> Outcome {
    let grids = [grid(4.0, 0.1, (2, 2, 4)), grid(8.0, 0.1, (2, 4, 4))];
    let mut worst = 0.0f64;
    for i in 0..20 {
        let g = &grids[i % grids.len()];
        let mut rng = trial_rng(11, i);
        let (_, eta) = random_feasible_pair(g, &mut rng);
        let closed = reduced_energy(g, &eta, Normalization::Body).map_err(|e| e.to_string())?;
        let oracle = projected_gradient(g, &eta);
        worst = worst.max((oracle - closed).abs() / closed.abs());
    }
    check(worst <= 1e-6, format!("largest relative energy gap {worst:.2e} over 20 eta (N <= 64)"))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let records = sweep();
    for r in &records {
        println!(
            "  sweep L={:>5}: E_min {:.6e}  E_trial {:.6e}  ratio {:.4}  iters {}  {:.1}s",
            r.lambda,
            r.e_min,
            r.e_trial,
            r.min_ratio(),
            r.iterations,
            r.wall_ms / 1e3
        );
    }
    let criteria: Vec<Criterion> = vec![
        ("scaling exponent", Box::new(|| scaling_exponent(&records))),
        ("lower bound", Box::new(|| lower_bound(&records))),
        ("trial-state constant", Box::new(|| trial_constant(&records))),
        ("closed-form minimizers", Box::new(closed_forms)),
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("trace inequalities", Box::new(trace_inequalities)),
        ("convexity split", Box::new(convexity_split)),
        ("counterexample hessian", Box::new(counterexample_hessian)),
        ("structural identities", Box::new(|| structural(&records))),
        ("oracle equivalence", Box::new(oracle_equivalence)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
