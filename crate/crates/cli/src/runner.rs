use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spde_lab::boundary::{self, KrylovConfig, ShellConfig, TimeSampling};
use spde_lab::domain::Domain;
use spde_lab::feynman_kac::{calibrate_convention, mc_value, FkQuery};
use spde_lab::flows::{transformation_consistency, ConsistencyConfig, StaticField};
use spde_lab::hitting::{exit_split_oracle, run_hitting_mc, HittingEstimate, HittingExperiment};
use spde_lab::sqrt_law::{empirical_pi, sine_flow_ensemble, EnsembleSpec};
use spde_lab::{energy_norms, generate_path, pilot, solve, CoefficientSet, GridSpec, SpdeProblem};

use crate::config::*;
use crate::manifest::{digest64, Check, OutputFile, RunManifest, Table};
use crate::{CliError, Context};

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputFile { file: name.to_string(), digest: digest64(bytes) });
        Ok(())
    }
}

#[derive(Default)]
struct Results {
    checks: Vec<Check>,
    tables: Vec<Table>,
}

impl Results {
    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    fn table(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) {
        self.tables.push(Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows });
    }
}

fn scheme_constants() -> BTreeMap<String, String> {
    [
        ("solver", "drift-implicit, noise-explicit Euler-Maruyama; centred differences"),
        ("rng", "ChaCha8 keyed substreams, Box-Muller normals"),
        ("noise", "dyadic Brownian bridge refinement"),
        ("fk_characteristics", "rho rho^T = 2 a_bar after calibration; Brownian-bridge exit test"),
        ("hitting", "Euler steps with Brownian-bridge crossing tests"),
        ("digest", "sha256, first 64 bits"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Runs one experiment, writes its outputs and `manifest.json` into `out`, and returns the
/// manifest. Checks are evaluated only when `check` is set.
pub fn run(config: &ExperimentConfig, seed: u64, out: &Path, check: bool) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut files = Outputs { dir: out.to_path_buf(), files: Vec::new() };
    let mut res = Results::default();
    match config {
        ExperimentConfig::Solve(c) => run_solve(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Krylov(c) => run_krylov(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Sqrtlaw(c) => run_sqrtlaw(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Hitting(c) => run_hitting(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Flow(c) => run_flow(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Fk(c) => run_fk(c, seed, &mut files, &mut res)?,
        ExperimentConfig::Shells(c) => run_shells(c, seed, &mut files, &mut res)?,
    }
    let manifest = RunManifest {
        kind: config.kind().name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.clone(),
        scheme: scheme_constants(),
        wall_time_s: start.elapsed().as_secs_f64(),
        checked: check,
        checks: if check { res.checks } else { Vec::new() },
        outputs: files.files,
        tables: res.tables,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out.join("manifest.json"), json)?;
    Ok(manifest)
}

fn run_solve(c: &SolveConfig, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let (domain, coeffs) = match c.problem {
        SolveProblem::Heat => (Domain::interval(0.0, 1.0), CoefficientSet::heat(0.0, 1.0)),
        SolveProblem::Krylov => (Domain::interval(0.0, 4.0), CoefficientSet::krylov(c.lambda)),
    };
    let noise = generate_path(seed, 0, 1, c.noise_level, c.horizon).context("noise")?;
    let sol = solve(&SpdeProblem::new(domain, coeffs, c.horizon), &GridSpec::new(c.cells).with_record_stride(c.record_stride), &noise).context("solve")?;
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    files.write("solution.csv", &buf)?;
    let e = energy_norms(&sol);
    res.table("solve", &["cells", "horizon", "sup_norm", "l2_h1_seminorm_sq"], vec![vec![c.cells as f64, c.horizon, e.sup_norm, e.l2_h1_seminorm_sq]]);

    let boundary_zero = sol.values.iter().all(|v| v[0] == 0.0 && *v.last().unwrap() == 0.0);
    res.check("dirichlet", boundary_zero, "boundary nodes are zero at every recorded time");
    if c.problem == SolveProblem::Heat {
        let t = *sol.times.last().unwrap();
        let decay = (-PI * PI * t).exp();
        let err = sol.grid.positions().iter().zip(sol.final_values()).map(|(x, u)| (u - decay * (PI * x[0]).sin()).abs()).fold(0.0, f64::max);
        res.check("heat_oracle", err <= 1e-3, format!("sup error {err:.3e} at t = {t}"));
        match boundary::fit_boundary_exponent(&sol, t, None) {
            Ok(fits) => res.check("boundary_exponent", (fits[0].alpha - 1.0).abs() <= 0.1, format!("alpha = {:.4}", fits[0].alpha)),
            Err(e) => res.check("boundary_exponent", false, e.to_string()),
        }
    }
    Ok(())
}

fn run_krylov(c: &KrylovToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let sampling = match c.sampling {
        SamplingKind::RunningMax => TimeSampling::RunningMax { from: c.from, windows: c.windows },
        SamplingKind::Fixed => TimeSampling::Fixed(c.t_samples.clone()),
    };
    let cfg = KrylovConfig {
        lambdas: c.lambdas.clone(),
        x_max: c.x_max,
        cells: c.cells,
        noise_level: c.noise_level,
        horizon: c.horizon,
        sampling,
        n_paths: c.n_paths,
        window: c.window.map(|[a, b]| (a, b)),
        seed,
    };
    let summaries = boundary::krylov_experiment(&cfg).context("krylov experiment")?;
    let mut buf = Vec::new();
    for (k, s) in summaries.iter().enumerate() {
        let mut part = Vec::new();
        s.write_csv(&mut part)?;
        let skip = if k == 0 { 0 } else { part.iter().position(|b| *b == b'\n').map_or(part.len(), |i| i + 1) };
        buf.extend_from_slice(&part[skip..]);
    }
    files.write("krylov.csv", &buf)?;

    let (stochastic, control) = summaries.split_at(summaries.len() - 1);
    let json: Vec<_> = stochastic
        .iter()
        .map(|s| serde_json::json!({ "lambda": s.lambda, "threshold": s.threshold, "median": s.median, "lower_quartile": s.lower_quartile }))
        .collect();
    let summary = serde_json::json!({ "ensembles": json, "control_median": control[0].median });
    files.write("summary.json", serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    res.table(
        "krylov",
        &["lambda", "median_alpha", "lower_quartile", "threshold"],
        stochastic.iter().map(|s| vec![s.lambda.unwrap(), s.median, s.lower_quartile, s.threshold.unwrap()]).collect(),
    );

    let mut sorted: Vec<_> = stochastic.iter().collect();
    sorted.sort_by(|a, b| a.lambda.unwrap().total_cmp(&b.lambda.unwrap()));
    for w in sorted.windows(2) {
        let o = boundary::krylov_ordering(w[0], w[1], c.resamples, 0.95, seed).context("bootstrap")?;
        res.check(
            "krylov_ordering",
            o.holds(),
            format!(
                "median {:.4} (lambda {}) vs {:.4} (lambda {}): difference lower bound {:.4}, upper bound {:.4}",
                w[0].median,
                w[0].lambda.unwrap(),
                w[1].median,
                w[1].lambda.unwrap(),
                o.difference_lower,
                o.upper_median
            ),
        );
    }
    let m = control[0].median;
    res.check("krylov_control", (m - 1.0).abs() <= 0.1, format!("control median {m:.4}"));
    Ok(())
}

fn run_sqrtlaw(c: &SqrtLawToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let reports = empirical_pi(&EnsembleSpec::new(c.n_paths, c.cs.clone(), c.n, seed)).context("oscillation ensemble")?;
    let mut buf = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        let mut part = Vec::new();
        r.write_csv(&mut part)?;
        let skip = if k == 0 { 0 } else { part.iter().position(|b| *b == b'\n').map_or(part.len(), |i| i + 1) };
        buf.extend_from_slice(&part[skip..]);
    }
    files.write("sqrtlaw.csv", &buf)?;
    res.table("sqrtlaw", &["c", "mean_sup_ratio", "q95", "max"], reports.iter().map(|r| vec![r.c, r.mean, r.q95, r.max]).collect());

    let mut by_c: Vec<_> = reports.iter().collect();
    by_c.sort_by(|a, b| a.c.total_cmp(&b.c));
    let decreasing = by_c.windows(2).all(|w| w[1].mean < w[0].mean);
    let means: Vec<String> = by_c.iter().map(|r| format!("c={}: {:.4}", r.c, r.mean)).collect();
    res.check("sqrtlaw_decreasing", decreasing, means.join(", "));
    if let Some(r8) = reports.iter().find(|r| r.c == 8.0) {
        res.check("sqrtlaw_c8", r8.mean <= pilot::PI_MEAN_MAX_C8, format!("mean {:.4} <= {:.4}", r8.mean, pilot::PI_MEAN_MAX_C8));
    }

    if c.flow_paths > 0 {
        let flows = sine_flow_ensemble(c.flow_paths, &c.flow_cs, c.n, seed).context("inverse-flow counts")?;
        let mut text = String::from("path_id,c,n,sup_ratio,skipped\n");
        let mut worst = vec![0.0f64; c.flow_cs.len()];
        for (i, per_c) in flows.iter().enumerate() {
            for (k, o) in per_c.iter().enumerate() {
                text.push_str(&format!("{i},{},{},{},{}\n", o.c, o.n, o.sup_ratio, o.skipped.len()));
                worst[k] = worst[k].max(o.sup_ratio);
            }
        }
        files.write("flow_counts.csv", text.as_bytes())?;
        for (cf, w) in c.flow_cs.iter().zip(&worst) {
            match pilot::brownian_envelope(cf / 2.0) {
                Some(env) => res.check("flow_envelope", *w <= env, format!("c={cf}: max {w:.4} <= envelope {env:.4}")),
                None => res.check("flow_envelope", false, format!("no pilot envelope recorded for c/2 = {}", cf / 2.0)),
            }
        }
    }
    Ok(())
}

fn run_hitting(c: &HittingToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let exp = HittingExperiment::brownian(c.d, c.p, c.c, c.r, c.n_paths, seed);
    let est = run_hitting_mc(&exp).context("hitting estimate")?;
    let mut fine = HittingExperiment::brownian(c.d, c.p + 2, c.c, c.r, c.n_paths, seed);
    fine.stream = 1;
    let est_fine = run_hitting_mc(&fine).context("rescaled hitting estimate")?;
    let text = format!("{}\n{}\n{}\n", HittingEstimate::csv_header(), est.csv_row(&exp), est_fine.csv_row(&fine));
    files.write("hitting.csv", text.as_bytes())?;
    let (a, b) = (&est.p_not_through_a, &est_fine.p_not_through_a);
    res.table("hitting", &["p", "c", "r", "d", "p_not_through_a", "se"], vec![
        vec![c.p as f64, c.c, c.r, c.d as f64, a.mean, a.se],
        vec![(c.p + 2) as f64, c.c, c.r, c.d as f64, b.mean, b.se],
    ]);

    if c.d == 1 {
        let oracle = exit_split_oracle(-c.c, c.r, 1.0, 0.0, c.oracle_cells, c.oracle_steps).context("oracle")?;
        res.check("hitting_oracle", a.within(oracle, 3.0, 0.0), format!("{:.5} +- {:.5} vs oracle {oracle:.5}", a.mean, a.se));
    }
    let bound = 1.0 - pilot::HITTING_MARGIN;
    res.check("hitting_margin", a.mean < bound, format!("{:.5} < {bound}", a.mean));
    let gap = (a.mean - b.mean).abs();
    res.check("hitting_rescaling", gap <= 3.0 * a.se.hypot(b.se), format!("p={} {:.5} vs p={} {:.5}", c.p, a.mean, c.p + 2, b.mean));
    Ok(())
}

fn run_flow(c: &FlowToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let cfg = ConsistencyConfig {
        a: c.a,
        sigma: c.sigma,
        source: c.source,
        horizon: c.horizon,
        cells: c.cells,
        noise_level: c.noise_level,
        probes: c.probes.clone(),
        seed,
    };
    let mut text = String::from("path_id,x,direct,transformed\n");
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for path in 0..c.n_paths as u64 {
        let s = transformation_consistency(&cfg, path).context("transformation consistency")?;
        for ((x, u), v) in s.probes.iter().zip(&s.direct).zip(&s.transformed) {
            text.push_str(&format!("{path},{x},{u},{v}\n"));
        }
        worst = worst.max(s.sup_gap());
        rows.push(vec![path as f64, s.sup_gap()]);
    }
    files.write("flow.csv", text.as_bytes())?;
    res.table("flow", &["path", "sup_gap"], rows);
    res.check("flow_consistency", worst <= 5e-2, format!("max sup gap {worst:.4e}"));
    Ok(())
}

fn run_fk(c: &FkToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let cal = calibrate_convention(c.calibration_paths, c.dt, seed).context("convention calibration")?;
    res.check("fk_calibration", true, format!("selected {:?}; oracle {:.5}, doubled {:.5}, plain {:.5}", cal.chosen, cal.oracle, cal.doubled.mean, cal.plain.mean));
    let (coeffs, oracle): (CoefficientSet, Box<dyn Fn(f64) -> f64>) = match c.case {
        FkCase::Heat => {
            let t = c.t;
            (CoefficientSet::heat(0.0, 1.0), Box::new(move |x| (-PI * PI * t).exp() * (PI * x).sin()))
        }
        FkCase::Stationary => (CoefficientSet::new(1, 1).with_drift(|_, _, _, _| 1.0), Box::new(|x| x * (1.0 - x) / 2.0)),
    };
    let field = StaticField { coeffs: &coeffs };
    let domain = Domain::interval(0.0, 1.0);
    let mut text = String::from("probe_t,probe_x,estimate,se,n_paths,seed\n");
    let mut rows = Vec::new();
    for (k, &x) in c.probes.iter().enumerate() {
        let mut q = FkQuery::new(c.t, vec![x], c.n_paths, c.dt, seed);
        q.stream = k as u64 + 1;
        q.convention = cal.chosen;
        let est = mc_value(&field, &domain, &q).context("feynman-kac estimate")?;
        text.push_str(&format!("{},{x},{},{},{},{seed}\n", c.t, est.mean, est.se, c.n_paths));
        let o = oracle(x);
        res.check("fk_oracle", est.within(o, 3.0, 0.0), format!("x={x}: {:.5} +- {:.5} vs {o:.5}", est.mean, est.se));
        rows.push(vec![x, est.mean, est.se, o]);
    }
    files.write("fk.csv", text.as_bytes())?;
    res.table("fk", &["x", "estimate", "se", "oracle"], rows);
    Ok(())
}

fn run_shells(c: &ShellToml, seed: u64, files: &mut Outputs, res: &mut Results) -> Result<(), CliError> {
    let cfg = ShellConfig {
        cells: c.cells,
        noise_level: c.noise_level,
        horizon: c.horizon,
        record_stride: c.record_stride,
        t0: c.t0,
        r0: c.r0,
        j_min: c.j_min,
        j_max: c.j_max,
        n_paths: c.n_paths,
        seed,
    };
    let profiles = boundary::shell_ensemble(&cfg).context("shell ensemble")?;
    let mut text = String::from("path_id,j,M_j\n");
    for (i, p) in profiles.iter().enumerate() {
        for s in &p.shells {
            text.push_str(&format!("{i},{},{}\n", s.j, s.sup));
        }
    }
    files.write("shells.csv", text.as_bytes())?;
    res.table("shells", &["path", "ratio", "alpha"], profiles.iter().enumerate().map(|(i, p)| vec![i as f64, p.ratio, p.alpha]).collect());
    let worst = profiles.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let bound = 1.0 - pilot::SHELL_MARGIN;
    res.check("shell_ratio", worst < bound, format!("max ratio {worst:.4} < {bound}; alpha >= {:.4}", -2.0 * worst.log2()));
    Ok(())
}
