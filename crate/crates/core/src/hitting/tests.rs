use super::*;
use proptest::prelude::*;

const GAUSS_TAIL_1: f64 = 0.158_655_253_931_457_05;

#[test]
fn barrier_examples() {
    assert_eq!(barrier_value(&[-1.0, 0.0], 7.0, 1.0), 0.0);
    assert_eq!(barrier_value(&[-2.0, 0.0, 0.0], 14.0, 2.0), 0.0);
    assert!((barrier_value(&[0.0, 0.0], 7.0, 1.0) - 0.125).abs() < 1e-15);
    assert!((barrier_value(&[0.0], 7.0, 1.0) - 0.125).abs() < 1e-15);
    for y1 in [-3.0, 0.0, 2.5] {
        assert_eq!(barrier_value(&[y1, 6.0], 7.0, 1.0), y1 + 2.0);
        assert_eq!(barrier_value(&[y1, 4.0, 5.0], 7.0, 1.0), y1 + 2.0);
    }
}

#[test]
fn profile_is_twice_continuous_at_the_blend_edges() {
    let (r, c) = (7.0, 1.0);
    let second = |a: f64, e: f64| {
        let f = |a: f64| barrier_profile(a, r, c);
        let (p0, q0) = f(a);
        let (pp, qp) = f(a + e);
        let (pm, qm) = f(a - e);
        ((pp - 2.0 * p0 + pm) / (e * e), (qp - 2.0 * q0 + qm) / (e * e))
    };
    // the one-sided second derivatives approach each other linearly in the offset
    for edge in [5.0, 6.0] {
        for off in [1e-3, 1e-4] {
            let (l, rr) = (second(edge - off, off / 10.0), second(edge + off, off / 10.0));
            assert!((l.0 - rr.0).abs() < 100.0 * off, "phi'' jumps at {edge}: {l:?} vs {rr:?}");
            assert!((l.1 - rr.1).abs() < 100.0 * off, "psi'' jumps at {edge}: {l:?} vs {rr:?}");
        }
    }
}

#[test]
fn barrier_max_matches_grid_maximum() {
    let b = barrier_max(7.0, 1.0).unwrap();
    assert!((b.m - (7.0 / 2f64.sqrt() + 1.0) / 8.0).abs() < 1e-15);
    assert!((b.m - 0.743_719).abs() < 1e-6);
    let half = 7.0 / 2f64.sqrt();
    let g = |y1: f64| (y1 + 1.0) / (1.0 + (24.5 + y1 * y1).sqrt());
    let n = 100_000;
    let grid = (0..=n).map(|i| g(-half + 2.0 * half * i as f64 / n as f64)).fold(f64::MIN, f64::max);
    assert!((grid - b.m).abs() < 1e-6);
    assert!((b.critical_y1 - 11.75).abs() < 1e-12);
    assert!(b.numerator_at_critical > 0.0);
    assert!(b.min_numerator > 0.0);
    // f over the planar half-ball
    let mut best: f64 = f64::MIN;
    for i in 0..=400 {
        for j in 0..=400 {
            let y = [-half + 2.0 * half * i as f64 / 400.0, -half + 2.0 * half * j as f64 / 400.0];
            if y[0] * y[0] + y[1] * y[1] <= half * half {
                best = best.max(barrier_value(&y, 7.0, 1.0));
            }
        }
    }
    assert!(best <= b.m + 1e-12 && best > b.m - 1e-3, "{best} vs {}", b.m);
}

#[test]
fn inadmissible_geometry_is_rejected() {
    assert!(barrier_max(6.0, 1.0).is_err());
    assert!(barrier_max(7.0, 0.5).is_err());
    let mut e = HittingExperiment::brownian(1, 0, 1.0, 6.0, 10, 0);
    assert!(run_hitting_mc(&e).is_err());
    e.r = 7.0;
    e.n_paths = 0;
    assert!(matches!(run_hitting_mc(&e), Err(LabError::Parameter(_))));
}

#[test]
fn drift_cap_line_case_is_exact() {
    // f is affine in d = 1: Ĉ = |f'| = 1/(c + r)
    let cap = drift_cap(7.0, 1.0, 1, 1.0).unwrap();
    assert!((cap.c_hat - 0.125).abs() < 1e-9, "{cap:?}");
    let m = (7.0 / 2f64.sqrt() + 1.0) / 8.0;
    assert!((cap.c0 - (1.0 - m) / 0.25).abs() < 1e-8);
    assert!((cap.c0 - 1.025).abs() < 1e-3);
    // no curvature, so Δ only enters through difference noise
    assert!((drift_cap(7.0, 1.0, 1, 0.0).unwrap().c0 - cap.c0).abs() < 1e-8);
}

#[test]
fn drift_cap_decreases_with_diffusion_bound() {
    for d in [2, 3] {
        let caps: Vec<f64> = [0.0, 1.0, 2.0].iter().map(|dl| drift_cap(7.0, 1.0, d, *dl).unwrap().c0).collect();
        assert!(caps.iter().all(|c| c.is_finite() && *c > 0.0));
        assert!(caps[0] > caps[1] && caps[1] >= caps[2], "d = {d}: {caps:?}");
    }
}

#[test]
fn start_inside_target_never_escapes() {
    let mut e = HittingExperiment::brownian(1, 0, 1.0, 7.0, 200, 3);
    e.start = vec![-1.5];
    let est = run_hitting_mc(&e).unwrap();
    assert_eq!(est.p_not_through_a.mean, 0.0);
    assert_eq!(est.target, 200);
}

#[test]
fn start_outside_half_cylinder_is_rejected() {
    let mut e = HittingExperiment::brownian(1, 0, 1.0, 7.0, 10, 3);
    e.start = vec![5.0];
    assert!(run_hitting_mc(&e).is_err());
    e.start = vec![0.0];
    e.start_time = 0.6;
    assert!(run_hitting_mc(&e).is_err());
    e.start_time = 0.0;
    e.target.level = 1.2;
    assert!(run_hitting_mc(&e).is_err());
}

#[test]
fn finite_difference_oracle_matches_reflection() {
    let q = exit_split_oracle(-1.0, 7.0, 1.0, 0.0, 1600, 4000).unwrap();
    assert!((q - (1.0 - 2.0 * GAUSS_TAIL_1)).abs() < 2e-4, "{q}");
}

#[test]
fn line_estimate_matches_oracle() {
    let e = HittingExperiment::brownian(1, 0, 1.0, 7.0, 20_000, 11);
    let est = run_hitting_mc(&e).unwrap();
    let oracle = exit_split_oracle(-1.0, 7.0, 1.0, 0.0, 1600, 4000).unwrap();
    assert!(est.p_not_through_a.within(oracle, 3.0, 0.0), "{:?} vs {oracle}", est.p_not_through_a);
    assert!(est.p_not_through_a.mean < 1.0 - crate::pilot::HITTING_MARGIN);
    assert_eq!(est.sphere, 0);
}

#[test]
fn brownian_rescaling() {
    let base = HittingExperiment::brownian(1, 0, 1.0, 7.0, 20_000, 21);
    let mut fine = HittingExperiment::brownian(1, 2, 1.0, 7.0, 20_000, 21);
    fine.stream = 1;
    let (a, b) = (run_hitting_mc(&base).unwrap().p_not_through_a, run_hitting_mc(&fine).unwrap().p_not_through_a);
    assert!((a.mean - b.mean).abs() <= 3.0 * a.se.hypot(b.se), "{a:?} vs {b:?}");
}

#[test]
fn rotation_invariance_in_the_plane() {
    let e = HittingExperiment::brownian(2, 0, 1.0, 7.0, 10_000, 5);
    let mut rot = e.clone();
    let th: f64 = 1.1;
    rot.target.normal = vec![-th.cos(), -th.sin()];
    rot.stream = 9;
    let (a, b) = (run_hitting_mc(&e).unwrap().p_not_through_a, run_hitting_mc(&rot).unwrap().p_not_through_a);
    assert!((a.mean - b.mean).abs() <= 3.0 * a.se.hypot(b.se), "{a:?} vs {b:?}");
}

#[test]
fn enlarging_the_target_is_pathwise_monotone() {
    let small = HittingExperiment::brownian(2, 0, 1.0, 7.0, 2000, 8);
    let mut big = small.clone();
    big.target.level = 0.4;
    let (s, b) = (simulate_stops(&small).unwrap(), simulate_stops(&big).unwrap());
    let mut strict = 0;
    for (x, y) in s.iter().zip(&b) {
        if *x == Stop::Target {
            assert_eq!(*y, Stop::Target);
        }
        if *y == Stop::Target && *x != Stop::Target {
            strict += 1;
        }
    }
    assert!(strict > 0);
}

#[test]
fn drift_and_diffusion_bounds_are_enforced() {
    let mut e = HittingExperiment::brownian(1, 0, 1.0, 7.0, 10, 1);
    e.drift = Some(Arc::new(|_, _, out: &mut [f64]| out[0] = 0.5));
    e.drift_bound = 0.1;
    assert!(run_hitting_mc(&e).is_err());
    e.drift_bound = 0.5;
    assert!(run_hitting_mc(&e).is_ok());
    e.diffusion = Some(Arc::new(|_, _, out: &mut [f64]| out[0] = 2.0));
    assert!(run_hitting_mc(&e).is_err());
    e.big_delta = 4.0;
    assert!(run_hitting_mc(&e).is_ok());
}

#[test]
fn estimates_are_reproducible() {
    let e = HittingExperiment::brownian(2, 1, 1.0, 7.0, 500, 4);
    assert_eq!(simulate_stops(&e).unwrap(), simulate_stops(&e).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn barrier_sign_and_sphere_level(c in 1.0f64..3.0, extra in 0.0f64..10.0, u in -1.0f64..1.0, v in -1.0f64..1.0, w in -1.0f64..1.0, s in 0.0f64..1.0) {
        let r = 7.0 * c + extra;
        let y = [u * r, v * r, w * r];
        let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        if norm <= r && y[0] >= -c {
            prop_assert!(barrier_value(&y, r, c) >= -1e-12);
        }
        // the same direction on the sphere
        if norm > 0.0 {
            let z = [y[0] / norm * r, y[1] / norm * r, y[2] / norm * r];
            if z[0] >= -c {
                prop_assert!(barrier_value(&z, r, c) >= 1.0 - 1e-12);
            }
        }
        prop_assert!(barrier_max(r, c).unwrap().m < 1.0);
        let _ = s;
    }
}
