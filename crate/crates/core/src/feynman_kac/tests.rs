use std::f64::consts::PI;

use super::*;
use crate::flows::{integrate_forward, invert_point, AllSpace, FlowRegion, FlowSpec, Lattice, TransformedCoefficients};
use crate::noise::generate_path;
use crate::solver::{solve, GridSpec, SpdeProblem};

#[test]
fn constant_payoff_without_boundary() {
    let c = CoefficientSet::new(1, 1).with_initial(|_| 1.0);
    let est = mc_value(&StaticField { coeffs: &c }, &AllSpace, &FkQuery::new(0.3, vec![0.2], 500, 0.01, 1)).unwrap();
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.se, 0.0);
}

#[test]
fn zero_paths_is_an_error() {
    let c = CoefficientSet::heat(0.0, 1.0);
    assert!(mc_value(&StaticField { coeffs: &c }, &AllSpace, &FkQuery::new(0.3, vec![0.2], 0, 0.01, 1)).is_err());
}

#[test]
fn heat_probe_matches_fourier_oracle() {
    let c = CoefficientSet::heat(0.0, 1.0);
    let est = mc_value(&StaticField { coeffs: &c }, &Domain::interval(0.0, 1.0), &FkQuery::new(0.1, vec![0.5], 20_000, 1e-4, 2)).unwrap();
    let oracle = (-PI * PI * 0.1).exp();
    assert!(est.within(oracle, 3.0, 0.0), "{est:?} vs {oracle}");
}

#[test]
fn stationary_source_problem_matches_ode_oracle() {
    let c = CoefficientSet::new(1, 1).with_drift(|_, _, _, _| 1.0);
    let est = mc_value(&StaticField { coeffs: &c }, &Domain::interval(0.0, 1.0), &FkQuery::new(2.0, vec![0.3], 20_000, 1e-4, 3)).unwrap();
    assert!(est.within(0.3 * 0.7 / 2.0, 3.0, 0.0), "{est:?}");
}

#[test]
fn calibration_selects_doubled_diffusion() {
    let cal = calibrate_convention(20_000, 1e-4, 4).unwrap();
    assert_eq!(cal.chosen, Convention::Doubled);
    // the plain convention halves the generator, giving e^{−π²t/2}
    assert!(cal.plain.within((-PI * PI * 0.05).exp(), 3.0, 0.0));
}

#[test]
fn exit_probability_matches_first_exit_series() {
    let c = CoefficientSet::heat(0.0, 1.0);
    let field = StaticField { coeffs: &c };
    let domain = Domain::interval(0.0, 1.0);
    let stats = exit_statistics(&field, &domain, &FkQuery::new(0.1, vec![0.5], 20_000, 1e-4, 5)).unwrap();
    let expected = 1.0 - survival_probability(0.5, 0.1);
    assert!(stats.exit_probability.within(expected, 3.0, 0.0), "{:?} vs {expected}", stats.exit_probability);
    let hist = stats.histogram(2, 0.0, 1.0);
    assert_eq!(hist.iter().sum::<usize>(), stats.exit_points.len());
    // symmetric start: both boundaries receive comparable mass
    let (a, b) = (hist[0] as f64, hist[1] as f64);
    assert!((a - b).abs() < 4.0 * (a + b).sqrt());

    let early = exit_statistics(&field, &domain, &FkQuery::new(1e-3, vec![0.5], 2_000, 1e-5, 6)).unwrap();
    assert_eq!(early.exit_probability.mean, 0.0);

    let outside = exit_statistics(&field, &domain, &FkQuery::new(0.2, vec![1.2], 100, 1e-3, 7)).unwrap();
    assert_eq!(outside.exit_probability.mean, 1.0);
    assert!(outside.exit_times.iter().all(|t| *t == 0.2));
}

#[test]
fn survival_series_limits() {
    assert!((survival_probability(0.5, 1e-3) - 1.0).abs() < 1e-9);
    assert!(survival_probability(0.5, 2.0) < 1e-8);
    assert!((survival_probability(0.3, 0.1) - survival_probability(0.7, 0.1)).abs() < 1e-12);
}

#[test]
fn standard_error_halves_with_four_times_the_paths() {
    let c = CoefficientSet::heat(0.0, 1.0);
    let field = StaticField { coeffs: &c };
    let domain = Domain::interval(0.0, 1.0);
    let a = mc_value(&field, &domain, &FkQuery::new(0.1, vec![0.4], 4_000, 1e-3, 8)).unwrap();
    let b = mc_value(&field, &domain, &FkQuery::new(0.1, vec![0.4], 16_000, 1e-3, 9)).unwrap();
    let ratio = b.se / a.se;
    assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn nonnegative_data_give_nonnegative_payoffs() {
    let c = CoefficientSet::new(1, 1).with_initial(|x| x[0] * x[0]).with_drift(|_, x, _, _| x[0].abs());
    let q = FkQuery::new(0.2, vec![0.6], 2_000, 1e-3, 10);
    let chars = characteristics(&StaticField { coeffs: &c }, &Domain::interval(0.0, 1.0), &q).unwrap();
    assert!(chars.iter().all(|ch| ch.payoff >= 0.0));
}

#[test]
fn zero_loading_agrees_with_grid_solver() {
    let c = CoefficientSet::heat(0.0, 1.0).with_drift(|_, _, _, _| 1.0);
    let noise = generate_path(0, 0, 1, 10, 0.1).unwrap();
    let sol = solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), c.clone(), 0.1), &GridSpec::new(100).with_record_stride(usize::MAX), &noise).unwrap();
    let field = StaticField { coeffs: &c };
    for (k, x) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        let est = mc_value(&field, &Domain::interval(0.0, 1.0), &FkQuery::new(0.1, vec![x], 10_000, 1e-4, 20 + k as u64)).unwrap();
        let grid = sol.final_values()[(x * 100.0).round() as usize];
        assert!(est.within(grid, 3.0, 1e-2), "x={x}: {est:?} vs {grid}");
    }
}

#[test]
fn constant_loading_agrees_with_grid_solver() {
    let horizon = 0.1;
    let c = CoefficientSet::heat(0.0, 1.0).with_constant_sigma(vec![0.5]).with_drift(|_, _, _, _| 1.0);
    let domain = Domain::interval(0.0, 1.0);
    let noise = generate_path(1, 3, 1, 10, horizon).unwrap();
    let sol = solve(&SpdeProblem::new(domain, c.clone(), horizon), &GridSpec::new(100).with_record_stride(usize::MAX), &noise).unwrap();
    let flow = integrate_forward(&c, &noise, &FlowSpec::new(Lattice::line(-2.0, 3.0, 500), 0.0, horizon)).unwrap();
    let field = TransformedCoefficients::new(&c, &flow).unwrap();
    let region = FlowRegion { flow: &flow, domain };
    for (k, x) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        let y = invert_point(&flow, horizon, &[x]).unwrap();
        let mut q = FkQuery::new(horizon, y, 4_000, flow.dt(), 30 + k as u64);
        q.stream = 3;
        let est = mc_value(&field, &region, &q).unwrap();
        let grid = sol.final_values()[(x * 100.0).round() as usize];
        assert!(est.within(grid, 3.0, 1e-2), "x={x}: {est:?} vs {grid}");
    }
}
