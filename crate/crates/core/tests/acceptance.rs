use std::f64::consts::PI;
use std::hash::{DefaultHasher, Hasher};
use std::time::{Duration, Instant};

use spde_lab::boundary::{self, fit_boundary_exponent, krylov_experiment, krylov_ordering, krylov_threshold, shell_ensemble, KrylovConfig, ShellConfig};
use spde_lab::domain::Domain;
use spde_lab::feynman_kac::{calibrate_convention, mc_value, FkQuery};
use spde_lab::flows::{composition_residual, integrate_forward, invert_point, transformation_consistency, ConsistencyConfig, FlowSpec, Lattice, StaticField};
use spde_lab::hitting::{exit_split_oracle, run_hitting_mc, HittingExperiment};
use spde_lab::solver::{lattice_samples, Grid};
use spde_lab::sqrt_law::{empirical_pi, sine_flow_ensemble, sine_loading, EnsembleSpec};
use spde_lab::stats::{fit_line, Estimate};
use spde_lab::{coercivity_gap, generate_path, pilot, solve, CoefficientSet, GridSpec, Result, SpdeProblem};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
    digest: u64,
}

#[derive(Default)]
struct Digest(DefaultHasher);

impl Digest {
    fn add(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.write_u64(x.to_bits());
        }
    }

    fn finish(&self) -> u64 {
        self.0.finish()
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

fn coercivity() -> Result<Outcome> {
    let domain = Domain::interval(0.0, 4.0);
    let grid = Grid::for_domain(&domain, 256)?;
    let samples = lattice_samples(&domain, &grid, &[0.0, 0.25, 0.5]);
    let mut d = Digest::default();
    let mut worst: f64 = 0.0;
    for lambda in [0.1, 0.2, 0.5] {
        let gap = coercivity_gap(&CoefficientSet::krylov(lambda), &samples)?;
        d.add(&[gap]);
        worst = worst.max((gap - lambda / 2.0).abs());
    }
    Ok(Outcome { pass: worst <= 1e-12, detail: format!("max |gap - lambda/2| = {worst:.2e}"), digest: d.finish() })
}

fn heat() -> Result<Outcome> {
    let t = 0.1;
    let noise = generate_path(SEED, 0, 1, 14, t)?;
    let sol = solve(&SpdeProblem::new(Domain::interval(0.0, 1.0), CoefficientSet::heat(0.0, 1.0), t), &GridSpec::new(256), &noise)?;
    let decay = (-PI * PI * t).exp();
    let err = sol.grid.positions().iter().zip(sol.final_values()).map(|(x, u)| (u - decay * (PI * x[0]).sin()).abs()).fold(0.0, f64::max);
    let alpha = fit_boundary_exponent(&sol, t, None)?[0].alpha;
    let mut d = Digest::default();
    d.add(sol.final_values());
    d.add(&[alpha]);
    Ok(Outcome { pass: err <= 1e-3 && (alpha - 1.0).abs() <= 0.1, detail: format!("sup error {err:.3e}, alpha {alpha:.4}"), digest: d.finish() })
}

fn linear_loading(m: f64) -> CoefficientSet {
    CoefficientSet::new(1, 1)
        .with_a(move |_, x, out| out[0] = 1.0 + 0.5 * m * m * x[0] * x[0])
        .with_sigma(move |_, x, out| out[0] = m * x[0])
        .with_sigma_jacobian(move |_, _, out| out[0] = m)
}

fn flow_engine() -> Result<Outcome> {
    let mut d = Digest::default();
    let fine = 12;
    let levels: Vec<i32> = (8..=12).collect();
    let lattice = Lattice::line(0.5, 1.5, 1);
    let mut errs = vec![Vec::new(); levels.len()];
    for path in 0..200 {
        let noise = generate_path(SEED, path, 1, fine, 1.0)?;
        // Jacobian of x ↦ x e^{−W − 1/2}
        let exact = (-noise.value(0, 1.0) - 0.5).exp();
        for (e, &level) in errs.iter_mut().zip(&levels) {
            let spec = FlowSpec::new(lattice.clone(), 0.0, 1.0).with_noise_stride(1 << (fine - level)).with_record_stride(usize::MAX);
            let flow = integrate_forward(&linear_loading(1.0), &noise, &spec)?;
            e.push((flow.last().snapshot().jac[0] - exact).abs());
        }
    }
    let xs: Vec<f64> = levels.iter().map(|&l| 2f64.powi(-l).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| Estimate::from_samples(e).mean.ln()).collect();
    let slope = fit_line(&xs, &ys).expect("five levels").slope;
    d.add(&ys);

    let noise = generate_path(SEED, 1000, 1, 10, 1.0)?;
    let l = Lattice::line(-1.0, 1.0, 64);
    let constant = CoefficientSet::new(1, 1).with_constant_sigma(vec![0.9]);
    let residual = composition_residual(&constant, &noise, &l, (0.25, 0.5, 1.0), 1)?;
    d.add(&[residual]);

    let flow = integrate_forward(&sine_loading(), &noise, &FlowSpec::new(Lattice::line(-3.0, 3.0, 60), 0.0, 1.0).with_record_stride(64))?;
    let diam = flow.lattice().diameter();
    let mut round_trip: f64 = 0.0;
    for target in [-1.5, -0.2, 0.0, 0.4, 1.9] {
        let y = invert_point(&flow, 1.0, &[target])?;
        round_trip = round_trip.max((flow.last().position(&y)[0] - target).abs());
        d.add(&y);
    }
    let pass = (0.4..=0.6).contains(&slope) && residual <= 1e-12 && round_trip <= 1e-10 * diam;
    Ok(Outcome { pass, detail: format!("strong order {slope:.3}, composition residual {residual:.2e}, round trip {round_trip:.2e}"), digest: d.finish() })
}

fn consistency() -> Result<Outcome> {
    let cfg = ConsistencyConfig { seed: SEED, ..ConsistencyConfig::default() };
    let mut d = Digest::default();
    let mut worst: f64 = 0.0;
    for path in 0..20 {
        let s = transformation_consistency(&cfg, path)?;
        d.add(&s.direct);
        d.add(&s.transformed);
        worst = worst.max(s.sup_gap());
    }
    Ok(Outcome { pass: worst <= 5e-2, detail: format!("max sup gap {worst:.3e} over 20 paths"), digest: d.finish() })
}

fn feynman_kac() -> Result<Outcome> {
    let cal = calibrate_convention(20_000, 1e-4, SEED)?;
    let mut d = Digest::default();
    d.add(&[cal.doubled.mean, cal.plain.mean]);
    let domain = Domain::interval(0.0, 1.0);
    let heat = CoefficientSet::heat(0.0, 1.0);
    let stationary = CoefficientSet::new(1, 1).with_drift(|_, _, _, _| 1.0);
    let cases: [(&CoefficientSet, f64, f64, fn(f64) -> f64); 5] = [
        (&heat, 0.1, 0.25, |x| (-PI * PI * 0.1).exp() * (PI * x).sin()),
        (&heat, 0.1, 0.5, |x| (-PI * PI * 0.1).exp() * (PI * x).sin()),
        (&heat, 0.1, 0.75, |x| (-PI * PI * 0.1).exp() * (PI * x).sin()),
        (&stationary, 2.0, 0.3, |x| x * (1.0 - x) / 2.0),
        (&stationary, 2.0, 0.5, |x| x * (1.0 - x) / 2.0),
    ];
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for (k, (coeffs, t, x, oracle)) in cases.into_iter().enumerate() {
        let mut q = FkQuery::new(t, vec![x], 100_000, 1e-4, SEED);
        q.stream = k as u64 + 1;
        q.convention = cal.chosen;
        let est = mc_value(&StaticField { coeffs }, &domain, &q)?;
        d.add(&[est.mean, est.se]);
        pass &= est.within(oracle(x), 3.0, 0.0);
        worst = worst.max((est.mean - oracle(x)).abs() / est.se);
    }
    Ok(Outcome { pass, detail: format!("convention {:?}; worst deviation {worst:.2} SE over 5 probes", cal.chosen), digest: d.finish() })
}

fn sqrt_law() -> Result<Outcome> {
    let reports = empirical_pi(&EnsembleSpec::new(200, vec![1.0, 2.0, 4.0, 8.0], 16, SEED))?;
    let mut d = Digest::default();
    let means: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    d.add(&means);
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let c8 = means[3] <= pilot::PI_MEAN_MAX_C8;
    let cs = [2.0, 4.0, 8.0];
    let flows = sine_flow_ensemble(20, &cs, 16, SEED)?;
    let mut envelope = true;
    let mut flow_detail = Vec::new();
    for (k, c) in cs.iter().enumerate() {
        let worst = flows.iter().map(|p| p[k].sup_ratio).fold(0.0, f64::max);
        d.add(&[worst]);
        let env = pilot::brownian_envelope(c / 2.0);
        envelope &= env.is_some_and(|e| worst <= e);
        flow_detail.push(format!("c={c}: {worst:.4}"));
    }
    let means: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    Ok(Outcome {
        pass: decreasing && c8 && envelope,
        detail: format!("means [{}], inverse-flow max {}", means.join(", "), flow_detail.join(", ")),
        digest: d.finish(),
    })
}

fn hitting() -> Result<Outcome> {
    let exp = HittingExperiment::brownian(1, 0, 1.0, 7.0, 100_000, SEED);
    let a = run_hitting_mc(&exp)?.p_not_through_a;
    let mut fine = HittingExperiment::brownian(1, 2, 1.0, 7.0, 100_000, SEED);
    fine.stream = 1;
    let b = run_hitting_mc(&fine)?.p_not_through_a;
    let oracle = exit_split_oracle(-1.0, 7.0, 1.0, 0.0, 1600, 4000)?;
    let mut d = Digest::default();
    d.add(&[a.mean, a.se, b.mean, b.se, oracle]);
    let pass = a.within(oracle, 3.0, 0.0) && a.mean < 1.0 - pilot::HITTING_MARGIN && (a.mean - b.mean).abs() <= 3.0 * a.se.hypot(b.se);
    Ok(Outcome { pass, detail: format!("{:.5} +- {:.5} vs oracle {oracle:.5}; p=2 gives {:.5} +- {:.5}", a.mean, a.se, b.mean, b.se), digest: d.finish() })
}

fn krylov() -> Result<Outcome> {
    let cfg = KrylovConfig { seed: SEED, ..KrylovConfig::default() };
    let summaries = krylov_experiment(&cfg)?;
    let (lo, hi, control) = (&summaries[0], &summaries[1], &summaries[2]);
    let ordering = krylov_ordering(lo, hi, 2000, 0.95, SEED)?;
    let thresholds = (krylov_threshold(0.1) - (-5.0f64).exp()).abs() < 1e-15 && (krylov_threshold(0.3) - (-5.0f64 / 3.0).exp()).abs() < 1e-15;
    let mut d = Digest::default();
    for s in &summaries {
        d.add(&s.per_path());
    }
    d.add(&[ordering.difference_lower, ordering.upper_median]);
    let control_ok = (control.median - 1.0).abs() <= 0.1;
    Ok(Outcome {
        pass: ordering.holds() && control_ok && thresholds,
        detail: format!(
            "medians {:.4} (lambda 0.1) vs {:.4} (lambda 0.3); difference lower bound {:.4}, upper bound {:.4}; control {:.4}",
            lo.median, hi.median, ordering.difference_lower, ordering.upper_median, control.median
        ),
        digest: d.finish(),
    })
}

fn shells() -> Result<Outcome> {
    let cfg = ShellConfig { seed: SEED, ..ShellConfig::default() };
    let profiles = shell_ensemble(&cfg)?;
    let domain = Domain::interval(0.0, 1.0);
    let samples = lattice_samples(&domain, &Grid::for_domain(&domain, 128)?, &[0.0, 0.25, 0.5]);
    let gap = coercivity_gap(&boundary::smooth_coefficients(), &samples)?;
    let mut d = Digest::default();
    for p in &profiles {
        d.add(&[p.ratio, p.alpha]);
    }
    let worst = profiles.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let min_alpha = profiles.iter().map(|p| p.alpha).fold(f64::INFINITY, f64::min);
    let pass = worst < 1.0 - pilot::SHELL_MARGIN && min_alpha > 0.0 && gap > 0.0;
    Ok(Outcome { pass, detail: format!("max ratio {worst:.4}, min alpha {min_alpha:.4}, coercivity gap {gap:.3}"), digest: d.finish() })
}

fn criteria() -> Vec<Criterion> {
    let min = |m: u64| Duration::from_secs(60 * m);
    vec![
        Criterion { name: "coercivity gap of the Krylov family", budget: Duration::from_secs(1), run: coercivity },
        Criterion { name: "heat solution and boundary exponent", budget: Duration::from_secs(10), run: heat },
        Criterion { name: "flow engine", budget: min(1), run: flow_engine },
        Criterion { name: "transformation consistency", budget: min(5), run: consistency },
        Criterion { name: "Feynman-Kac estimates", budget: min(2), run: feynman_kac },
        Criterion { name: "oscillation counts", budget: min(5), run: sqrt_law },
        Criterion { name: "hitting probabilities", budget: min(5), run: hitting },
        Criterion { name: "Krylov exponent ordering", budget: min(30), run: krylov },
        Criterion { name: "shell decay", budget: min(30), run: shells },
    ]
}

fn report(id: usize, name: &str, pass: bool, detail: &str, elapsed: Option<Duration>) {
    let time = elapsed.map_or(String::new(), |e| format!(" [{:.1}s]", e.as_secs_f64()));
    println!("{} {id:>2} {name}: {detail}{time}", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let wide = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let list = criteria();
    let mut digests = Vec::new();
    let mut failures = 0;
    for (k, c) in list.iter().enumerate() {
        let start = Instant::now();
        let out = wide.install(c.run);
        let elapsed = start.elapsed();
        match out {
            Ok(o) => {
                let in_budget = elapsed <= c.budget;
                let detail = if in_budget { o.detail } else { format!("{} (over budget {:?})", o.detail, c.budget) };
                failures += usize::from(!(o.pass && in_budget));
                report(k + 1, c.name, o.pass && in_budget, &detail, Some(elapsed));
                digests.push(Some(o.digest));
            }
            Err(e) => {
                failures += 1;
                report(k + 1, c.name, false, &format!("error: {e}"), Some(elapsed));
                digests.push(None);
            }
        }
    }

    // same seed on one thread must reproduce every digest bit for bit
    let mut mismatched = Vec::new();
    for (k, c) in list.iter().enumerate() {
        let again = single.install(c.run).ok().map(|o| o.digest);
        if again.is_none() || again != digests[k] {
            mismatched.push((k + 1).to_string());
        }
    }
    let detail = if mismatched.is_empty() {
        format!("all {} criteria reproduce on rerun with 1 vs {threads} threads", list.len())
    } else {
        format!("digests differ for criteria {}", mismatched.join(", "))
    };
    failures += usize::from(!mismatched.is_empty());
    report(10, "determinism", mismatched.is_empty(), &detail, None);
    println!("{failures} of 10 criteria failed");
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
