use std::f64::consts::PI;

use super::*;
use crate::noise::generate_path;

fn heat_problem(horizon: f64) -> SpdeProblem {
    SpdeProblem::new(Domain::interval(0.0, 1.0), CoefficientSet::heat(0.0, 1.0), horizon)
}

fn sample_points() -> Vec<(f64, Vec<f64>)> {
    (0..11).map(|i| (0.0, vec![i as f64 / 10.0])).collect()
}

#[test]
fn coercivity_examples() {
    let lambda = 0.2;
    let krylov = CoefficientSet::krylov(lambda);
    assert!((coercivity_gap(&krylov, &sample_points()).unwrap() - 0.1).abs() < 1e-12);

    let identity = CoefficientSet::new(2, 1);
    assert_eq!(coercivity_gap(&identity, &[(0.0, vec![0.1, 0.2])]).unwrap(), 1.0);

    // σσ* = 2 I with a = 2 I
    let s2 = 2f64.sqrt();
    let c = CoefficientSet::new(2, 2).with_constant_a(vec![2.0, 0.0, 0.0, 2.0]).with_constant_sigma(vec![s2, 0.0, 0.0, s2]);
    assert!((coercivity_gap(&c, &[(0.0, vec![0.0, 0.0])]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn coercivity_rejects_asymmetric_a() {
    let c = CoefficientSet::new(2, 1).with_constant_a(vec![1.0, 0.5, 0.0, 1.0]);
    assert!(matches!(coercivity_gap(&c, &[(0.0, vec![0.0, 0.0])]), Err(LabError::Validation(_))));
    assert!(coercivity_gap(&c, &[]).is_err());
}

#[test]
fn one_step_is_implicit_euler_heat_step() {
    let n = 16;
    let h = 1.0 / n as f64;
    let dt = 1e-3;
    let domain = Domain::interval(0.0, 1.0);
    let grid = Grid::for_domain(&domain, n).unwrap();
    let u0: Vec<f64> = (0..=n).map(|i| (PI * i as f64 * h).sin()).collect();
    let got = step(&u0, 0.0, dt, &[0.3], &CoefficientSet::heat(0.0, 1.0), &domain, &grid).unwrap();
    // dense (I - dt Δ_h) solve on interior nodes
    let m = n - 1;
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = 1.0 + 2.0 * dt / (h * h);
        if i > 0 {
            a[(i, i - 1)] = -dt / (h * h);
        }
        if i + 1 < m {
            a[(i, i + 1)] = -dt / (h * h);
        }
    }
    let b = nalgebra::DVector::from_iterator(m, (1..n).map(|i| u0[i]));
    let x = a.lu().solve(&b).unwrap();
    assert_eq!(got[0], 0.0);
    assert_eq!(got[n], 0.0);
    for i in 1..n {
        assert!((got[i] - x[i - 1]).abs() < 1e-13);
    }
}

#[test]
fn heat_solution_matches_fourier_mode() {
    let noise = generate_path(1, 0, 1, 10, 0.1).unwrap();
    let sol = solve(&heat_problem(0.1), &GridSpec::new(256).with_record_stride(1024), &noise).unwrap();
    let decay = (-PI * PI * 0.1).exp();
    let err = sol
        .grid
        .positions()
        .iter()
        .zip(sol.final_values())
        .map(|(x, u)| (u - decay * (PI * x[0]).sin()).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-3, "L∞ error {err}");
}

/// Crank–Nicolson reference on a 4x finer lattice.
fn crank_nicolson(cells: usize, steps: usize, horizon: f64) -> Vec<f64> {
    let h = 1.0 / cells as f64;
    let dt = horizon / steps as f64;
    let r = dt / (h * h);
    let m = cells - 1;
    let mut u: Vec<f64> = (1..cells).map(|i| (PI * i as f64 * h).sin()).collect();
    let lower = vec![-0.5 * r; m];
    let upper = vec![-0.5 * r; m];
    let diag = vec![1.0 + r; m];
    let mut scratch = Vec::new();
    for _ in 0..steps {
        let mut rhs: Vec<f64> = (0..m)
            .map(|i| {
                let l = if i > 0 { u[i - 1] } else { 0.0 };
                let rr = if i + 1 < m { u[i + 1] } else { 0.0 };
                (1.0 - r) * u[i] + 0.5 * r * (l + rr)
            })
            .collect();
        linalg::solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch).unwrap();
        u = rhs;
    }
    let mut full = vec![0.0];
    full.extend(u);
    full.push(0.0);
    full
}

#[test]
fn heat_solution_matches_crank_nicolson_reference() {
    let noise = generate_path(1, 0, 1, 10, 0.1).unwrap();
    let sol = solve(&heat_problem(0.1), &GridSpec::new(256).with_record_stride(1024), &noise).unwrap();
    let reference = crank_nicolson(1024, 4000, 0.1);
    let err = (0..=256).map(|i| (sol.final_values()[i] - reference[4 * i]).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-3, "error vs CN {err}");
}

#[test]
fn zero_data_stays_zero() {
    let noise = generate_path(3, 0, 1, 6, 0.5).unwrap();
    let problem = SpdeProblem::new(Domain::interval(0.0, 1.0), CoefficientSet::krylov(0.3).with_initial(|_| 0.0), 0.5);
    let sol = solve(&problem, &GridSpec::new(32), &noise).unwrap();
    assert!(sol.values.iter().all(|row| row.iter().all(|v| *v == 0.0)));
}

#[test]
fn zero_horizon_returns_initial_slice() {
    let noise = generate_path(3, 0, 1, 2, 1.0).unwrap();
    let sol = solve(&heat_problem(0.0), &GridSpec::new(8), &noise).unwrap();
    assert_eq!(sol.times, vec![0.0]);
    assert_eq!(sol.values.len(), 1);
    assert!((sol.values[0][4] - 1.0).abs() < 1e-15);
}

fn linear_coeffs(scale: f64) -> CoefficientSet {
    CoefficientSet::new(1, 2)
        .with_a(|_, x, out| out[0] = 1.0 + 0.3 * x[0])
        .with_sigma(|_, x, out| {
            out[0] = 0.5 * (PI * x[0]).cos();
            out[1] = 0.2;
        })
        .with_drift(move |_, x, _, _| scale * x[0])
        .with_noise_term(move |_, x, _, out| {
            out[0] = scale * 0.1 * x[0];
            out[1] = -scale * 0.05;
        })
        .with_initial(move |x| scale * (PI * x[0]).sin())
}

#[test]
fn linear_problem_is_homogeneous_pathwise() {
    let noise = generate_path(9, 2, 2, 9, 0.2).unwrap();
    let spec = GridSpec::new(64);
    let one = solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), linear_coeffs(1.0), 0.2), &spec, &noise).unwrap();
    let two = solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), linear_coeffs(2.0), 0.2), &spec, &noise).unwrap();
    for (r1, r2) in one.values.iter().zip(&two.values) {
        for (a, b) in r1.iter().zip(r2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn dirichlet_nodes_stay_zero() {
    let noise = generate_path(4, 0, 2, 8, 0.2).unwrap();
    let sol = solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), linear_coeffs(1.0), 0.2), &GridSpec::new(40), &noise).unwrap();
    for row in &sol.values[1..] {
        assert_eq!(row[0], 0.0);
        assert_eq!(row[40], 0.0);
    }
    assert_eq!(sol.values[0][20], (PI * 0.5).sin());
}

/// Away from the boundary the Krylov solution is a diffused copy of ψ carried
/// by σW, so the scheme's undershoot must shrink under refinement.
#[test]
fn krylov_undershoot_vanishes_away_from_boundary() {
    let mut mins = Vec::new();
    for cells in [256usize, 512, 1024] {
        let h = 8.0 / cells as f64;
        let level = (0.25 / (h * h)).log2().ceil() as i32 + 2;
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            let noise = generate_path(seed, 0, 1, level, 0.25).unwrap();
            let coeffs = CoefficientSet::krylov(0.2).with_initial(|x| bump(x[0], -0.5, 0.5));
            let problem = SpdeProblem::new(Domain::interval(-4.0, 4.0), coeffs, 0.25);
            let sol = solve(&problem, &GridSpec::new(cells).with_record_stride(16), &noise).unwrap();
            worst = sol.values.iter().flatten().fold(worst, |m, v| m.min(*v));
        }
        mins.push(worst);
    }
    assert!(mins[0] < mins[1] && mins[1] < mins[2], "{mins:?}");
    assert!(mins[2] >= -0.05, "{mins:?}");
}

#[test]
fn expected_krylov_solution_is_nonnegative() {
    // E u^n = (I - dt A_h)^{-n} ψ because each noise increment is independent
    // of the current state; the implicit matrix is an M-matrix.
    let coeffs = CoefficientSet::krylov(0.2).with_constant_sigma(vec![0.0]);
    let noise = generate_path(0, 0, 1, 10, 0.25).unwrap();
    let sol = solve(&SpdeProblem::new(Domain::interval(0.0, 2.0), coeffs, 0.25), &GridSpec::new(64), &noise).unwrap();
    assert!(sol.values.iter().flatten().all(|v| *v >= 0.0));
}

#[test]
fn truncation_comparison_is_monotone() {
    let f: DriftFn = std::sync::Arc::new(|_, _, y, _| -y * y.abs());
    let noise = generate_path(2, 0, 1, 10, 0.2).unwrap();
    let psi = |x: &[f64]| 3.0 * (2.0 * PI * x[0]).sin();
    let run = |n: f64| {
        let coeffs = CoefficientSet::new(1, 1).with_initial(psi).with_drift_fn(Some(truncate_nonlinearity(&f, n, 1.0)));
        solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), coeffs, 0.2), &GridSpec::new(64).with_record_stride(16), &noise).unwrap()
    };
    let low = run(0.5);
    let high = run(2.0);
    for (a, b) in low.values.iter().zip(&high.values) {
        for (x, y) in a.iter().zip(b) {
            assert!(x <= y, "{x} > {y}");
        }
    }
}

#[test]
fn energy_norm_examples() {
    let zero = GridSolution::from_fn(Domain::interval(0.0, 1.0), Grid::for_domain(&Domain::interval(0.0, 1.0), 16).unwrap(), vec![0.0, 1.0], |_, _| 0.0);
    assert_eq!(energy_norms(&zero), EnergyNorms { sup_norm: 0.0, l2_h1_seminorm_sq: 0.0 });

    let mut last = f64::INFINITY;
    for cells in [64, 256, 1024] {
        let grid = Grid::for_domain(&Domain::interval(0.0, 1.0), cells).unwrap();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let s = GridSolution::from_fn(Domain::interval(0.0, 1.0), grid, times, |_, x| (PI * x[0]).sin());
        let e = energy_norms(&s);
        let err = (e.l2_h1_seminorm_sq - PI * PI / 2.0).abs();
        assert!(err < last);
        last = err;
    }
    assert!(last < 1e-4);

    let noise = generate_path(1, 0, 1, 8, 0.05).unwrap();
    let sol = solve(&heat_problem(0.05), &GridSpec::new(64), &noise).unwrap();
    assert!((energy_norms(&sol).sup_norm - 1.0).abs() < 1e-15);
}

#[test]
fn deterministic_error_decays_at_least_first_order() {
    let mut errs = Vec::new();
    let hs = [64usize, 128, 256];
    for (cells, level) in hs.iter().zip([11, 13, 15]) {
        let noise = generate_path(1, 0, 1, level, 0.1).unwrap();
        let sol = solve(&heat_problem(0.1), &GridSpec::new(*cells).with_record_stride(1 << level), &noise).unwrap();
        let decay = (-PI * PI * 0.1).exp();
        let err = sol.grid.positions().iter().zip(sol.final_values()).map(|(x, u)| (u - decay * (PI * x[0]).sin()).abs()).fold(0.0, f64::max);
        errs.push(err);
    }
    let xs: Vec<f64> = hs.iter().map(|c| (1.0 / *c as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let fit = crate::stats::fit_line(&xs, &ys).unwrap();
    assert!(fit.slope >= 1.0, "order {} from {errs:?}", fit.slope);
}

/// J0 by its power series; adequate for |x| below about 3.
fn bessel_j0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        term *= -(x * x / 4.0) / (k as f64 * k as f64);
        sum += term;
    }
    sum
}

#[test]
fn disk_heat_decays_like_first_bessel_mode() {
    let j01 = 2.404_825_557_695_773;
    let domain = Domain::disk([0.0, 0.0], 1.0);
    let coeffs = CoefficientSet::new(2, 1).with_initial(move |x| bessel_j0(j01 * (x[0] * x[0] + x[1] * x[1]).sqrt()));
    let noise = generate_path(1, 0, 1, 8, 0.05).unwrap();
    let sol = solve(&SpdeProblem::new(domain, coeffs, 0.05), &GridSpec::new(48).with_record_stride(256), &noise).unwrap();
    let decay = (-j01 * j01 * 0.05).exp();
    let mut err: f64 = 0.0;
    for (i, x) in sol.grid.positions().iter().enumerate() {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let exact = if r < 1.0 { decay * bessel_j0(j01 * r) } else { 0.0 };
        err = err.max((sol.final_values()[i] - exact).abs());
        if r >= 1.0 {
            assert_eq!(sol.final_values()[i], 0.0);
        }
    }
    assert!(err < 1e-2, "disk error {err}");
}

#[test]
fn csv_export_has_one_row_per_node_and_time() {
    let noise = generate_path(1, 0, 1, 2, 0.1).unwrap();
    let sol = solve(&heat_problem(0.1), &GridSpec::new(4), &noise).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + sol.times.len() * 5);
    assert!(text.starts_with("t,x,u\n"));
}


#[test]
fn krylov_sup_norm_mean_is_bounded_by_data() {
    for lambda in [0.1, 0.3] {
        let s = krylov_sup_norms(lambda, 100, 9).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(s.iter().all(|v| *v >= 1.0));
        assert!(mean <= crate::pilot::KRYLOV_SUP_FACTOR, "lambda {lambda}: mean {mean}");
    }
}
