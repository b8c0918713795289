//! Boundary behaviour of grid solutions: weighted norms, power-law exponent fits
//! near each boundary component, dyadic shell sups, and the Krylov ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{param, LabError, Result};
use crate::noise::generate_path;
use crate::solver::{bump, solve_recording, CoefficientSet, Grid, GridSolution, GridSpec, SpdeProblem, KRYLOV_BUMP};
use crate::stats::{self, LineFit};

/// `sup |u(t, x)| d(x, ∂G)^−α` over recorded times `t ≥ T0` and interior lattice nodes.
pub fn weighted_linf_alpha(sol: &GridSolution, alpha: f64, t0: f64) -> f64 {
    let dist = sol.boundary_distances();
    let mut best: f64 = 0.0;
    for (t, vals) in sol.times.iter().zip(&sol.values) {
        if *t < t0 - 1e-12 {
            continue;
        }
        for (u, d) in vals.iter().zip(&dist) {
            if *d > 0.0 {
                best = best.max(u.abs() * d.powf(-alpha));
            }
        }
    }
    best
}

/// `(Σ_{i ≤ order} ∫_G |Dⁱu|^p d(x, ∂G)^(θ − d + ip) dx)^(1/p)` by the midpoint rule on
/// lattice cells whose centre lies in the domain; cell values are corner averages and
/// gradients are forward differences.
pub fn weighted_lp_norm(domain: &Domain, grid: &Grid, u: &[f64], p: f64, theta: f64, order: u32) -> Result<f64> {
    if !(p >= 1.0) || order > 1 {
        return param("need p >= 1 and order <= 1");
    }
    if u.len() != grid.len() {
        return param("field does not match the grid");
    }
    let d = grid.dim() as f64;
    let h = grid.h();
    let vol = grid.cell_volume();
    let mut total = 0.0;
    let mut add = |centre: &[f64], value: f64, grad: f64| {
        let dist = domain.boundary_distance(centre);
        if !domain.inside(centre) || dist <= 0.0 {
            return;
        }
        total += value.abs().powf(p) * dist.powf(theta - d) * vol;
        if order == 1 {
            total += grad.powf(p) * dist.powf(theta - d + p) * vol;
        }
    };
    match *grid {
        Grid::Line { lo, nodes, .. } => {
            for i in 0..nodes - 1 {
                let c = [lo + (i as f64 + 0.5) * h];
                add(&c, 0.5 * (u[i] + u[i + 1]), ((u[i + 1] - u[i]) / h).abs());
            }
        }
        Grid::Square { origin, side, .. } => {
            for j in 0..side - 1 {
                for i in 0..side - 1 {
                    let k = j * side + i;
                    let c = [origin[0] + (i as f64 + 0.5) * h, origin[1] + (j as f64 + 0.5) * h];
                    let avg = 0.25 * (u[k] + u[k + 1] + u[k + side] + u[k + side + 1]);
                    let g = ((u[k + 1] - u[k]) / h).hypot((u[k + side] - u[k]) / h);
                    add(&c, avg, g);
                }
            }
        }
    }
    Ok(total.powf(1.0 / p))
}

/// One connected piece of `∂G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Lower,
    Upper,
    Circle,
}

/// Least-squares fit of `log|u|` against `log d(x, ∂G)` near one boundary component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub t: f64,
    pub component: Component,
    pub window: (f64, f64),
    pub alpha: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
    /// The solution took negative values in the window; the fit used `|u|`.
    pub negative: bool,
}

/// Default distance window `[4h, 0.1·diam]`.
pub fn default_window(sol: &GridSolution) -> (f64, f64) {
    (4.0 * sol.grid.h(), 0.1 * sol.domain.diameter())
}

fn components(domain: &Domain) -> Vec<Component> {
    match domain {
        Domain::Interval { .. } => vec![Component::Lower, Component::Upper],
        Domain::Disk { .. } => vec![Component::Circle],
    }
}

fn nearest_component(domain: &Domain, x: &[f64]) -> Component {
    match *domain {
        Domain::Interval { lo, hi } => {
            if x[0] - lo <= hi - x[0] {
                Component::Lower
            } else {
                Component::Upper
            }
        }
        Domain::Disk { .. } => Component::Circle,
    }
}

/// Power-law fits at the recorded time closest to `t`, one per boundary component.
pub fn fit_boundary_exponent(sol: &GridSolution, t: f64, window: Option<(f64, f64)>) -> Result<Vec<ExponentFit>> {
    let window = window.unwrap_or_else(|| default_window(sol));
    let diam = sol.domain.diameter();
    if !(window.0 > 0.0 && window.0 < window.1 && window.1 < diam / 2.0) {
        return param(format!("window {window:?} must lie strictly inside (0, {})", diam / 2.0));
    }
    let idx = sol.time_index(t);
    let vals = &sol.values[idx];
    components(&sol.domain)
        .into_iter()
        .map(|comp| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            let mut negative = false;
            for (i, u) in vals.iter().enumerate() {
                let x = sol.grid.position(i);
                let d = sol.domain.boundary_distance(&x);
                if d < window.0 || d > window.1 || nearest_component(&sol.domain, &x) != comp || !sol.domain.inside(&x) {
                    continue;
                }
                if *u < 0.0 {
                    negative = true;
                }
                if *u != 0.0 && u.is_finite() {
                    xs.push(d.ln());
                    ys.push(u.abs().ln());
                }
            }
            if xs.len() < 8 {
                return Err(LabError::InsufficientPoints { needed: 8, found: xs.len() });
            }
            let LineFit { slope, intercept, r2, n } = stats::fit_line(&xs, &ys).ok_or(LabError::InsufficientPoints { needed: 8, found: 1 })?;
            Ok(ExponentFit { t: sol.times[idx], component: comp, window, alpha: slope, intercept, r2, n, negative })
        })
        .collect()
}

/// Sup of `|u|` on the shell `{t ≥ T0 − 2^−j, d(x, ∂G) ≤ r0 2^(−j/2)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub j: u32,
    pub sup: f64,
    pub nodes: usize,
}

/// Shell sups with the geometric fit `M(j) ≈ C ĝ^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellProfile {
    pub shells: Vec<Shell>,
    pub ratio: f64,
    /// `−2 log₂ ĝ`.
    pub alpha: f64,
    pub r2: f64,
}

impl ShellProfile {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "j,M_j")?;
        for s in &self.shells {
            writeln!(w, "{},{}", s.j, s.sup)?;
        }
        Ok(())
    }
}

/// Shells for `j` in `j_range`, stopping at the first shell with fewer than 4 interior nodes.
pub fn shell_decay_profile(sol: &GridSolution, t0: f64, r0: f64, j_range: std::ops::RangeInclusive<u32>) -> Result<ShellProfile> {
    let dist = sol.boundary_distances();
    let mut shells = Vec::new();
    for j in j_range {
        let reach = r0 * 2f64.powf(-(j as f64) / 2.0);
        let start = t0 - 2f64.powi(-(j as i32));
        let nodes: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0 && dist[i] <= reach).collect();
        if nodes.len() < 4 {
            break;
        }
        let mut sup: f64 = 0.0;
        for (t, vals) in sol.times.iter().zip(&sol.values) {
            if *t >= start - 1e-12 {
                for &i in &nodes {
                    sup = sup.max(vals[i].abs());
                }
            }
        }
        shells.push(Shell { j, sup, nodes: nodes.len() });
    }
    let usable: Vec<&Shell> = shells.iter().filter(|s| s.sup > 0.0).collect();
    if usable.len() < 2 {
        return Err(LabError::InsufficientPoints { needed: 2, found: usable.len() });
    }
    let xs: Vec<f64> = usable.iter().map(|s| s.j as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|s| s.sup.ln()).collect();
    let fit = stats::fit_line(&xs, &ys).ok_or(LabError::InsufficientPoints { needed: 2, found: usable.len() })?;
    let ratio = fit.slope.exp();
    Ok(ShellProfile { shells, ratio, alpha: -2.0 * ratio.log2(), r2: fit.r2 })
}

/// When to fit along each path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeSampling {
    Fixed(Vec<f64>),
    /// Split `[from, horizon]` into `windows` equal pieces and take the time of the running
    /// maximum of `W` inside each; these are the times at which the zero boundary of the
    /// shifted heat problem has just advanced.
    RunningMax { from: f64, windows: usize },
}

/// Ensemble setup for [`krylov_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub lambdas: Vec<f64>,
    /// Right end of the truncated half-line.
    pub x_max: f64,
    pub cells: usize,
    /// Noise path depth; the time step is `horizon / 2^noise_level`.
    pub noise_level: i32,
    pub horizon: f64,
    pub sampling: TimeSampling,
    pub n_paths: usize,
    /// Defaults to `[4h, 0.1]`, which stays clear of the bump support.
    pub window: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            lambdas: vec![0.1, 0.3],
            x_max: 4.0,
            cells: 2048,
            noise_level: 14,
            horizon: 0.5,
            sampling: TimeSampling::RunningMax { from: 0.25, windows: 4 },
            n_paths: 50,
            window: None,
            seed: 1,
        }
    }
}

/// Fits for one path at every sampled time, and their median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFits {
    pub path: usize,
    pub fits: Vec<ExponentFit>,
    pub median: f64,
}

/// Exponent statistics for one `λ`; `None` marks the `σ = 0` control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovSummary {
    pub lambda: Option<f64>,
    /// `e^(−1/(2λ))`.
    pub threshold: Option<f64>,
    pub paths: Vec<PathFits>,
    /// Median and lower quartile of the per-path medians.
    pub median: f64,
    pub lower_quartile: f64,
}

impl KrylovSummary {
    pub fn per_path(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.median).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lambda,path_id,t,alpha_hat,r2,window_lo,window_hi")?;
        let lam = self.lambda.map_or("control".to_string(), |l| l.to_string());
        for p in &self.paths {
            for f in &p.fits {
                writeln!(w, "{lam},{},{},{},{},{},{}", p.path, f.t, f.alpha, f.r2, f.window.0, f.window.1)?;
            }
        }
        Ok(())
    }
}

/// `e^(−1/(2λ))`.
pub fn krylov_threshold(lambda: f64) -> f64 {
    (-1.0 / (2.0 * lambda)).exp()
}

/// Solver steps (1-based) at which to fit.
fn sample_steps(sampling: &TimeSampling, w: &[f64], dt: f64) -> Result<Vec<usize>> {
    let last = w.len() - 1;
    match sampling {
        TimeSampling::Fixed(ts) => ts
            .iter()
            .map(|t| {
                let k = (t / dt).round();
                if (t / dt - k).abs() > 1e-6 || k < 1.0 || k as usize > last {
                    return param(format!("sample time {t} is not on the time grid (dt = {dt})"));
                }
                Ok(k as usize)
            })
            .collect(),
        TimeSampling::RunningMax { from, windows } => {
            let first = (from / dt).round() as usize;
            if *windows == 0 || first >= last {
                return param("running-max sampling needs windows >= 1 and from < horizon");
            }
            let span = last - first;
            Ok((0..*windows)
                .map(|k| {
                    let (a, b) = (first + k * span / windows, first + (k + 1) * span / windows);
                    (a.max(1)..=b).max_by(|x, y| w[*x].total_cmp(&w[*y])).unwrap()
                })
                .collect())
        }
    }
}

/// Solves one ensemble member and fits the exponent at the lower boundary at each sample time.
fn krylov_path(cfg: &KrylovConfig, coeffs: &CoefficientSet, path: usize) -> Result<PathFits> {
    let domain = Domain::interval(0.0, cfg.x_max);
    let noise = generate_path(cfg.seed, path as u64, 1, cfg.noise_level, cfg.horizon)?;
    let steps = sample_steps(&cfg.sampling, noise.values(0), noise.step())?;
    let keep = steps.clone();
    let sol = solve_recording(&SpdeProblem::new(domain, coeffs.clone(), cfg.horizon), &GridSpec::new(cfg.cells), &noise, move |k, _| keep.contains(&k))?;
    let window = cfg.window.unwrap_or((4.0 * sol.grid.h(), 0.1));
    let fits = steps
        .iter()
        .map(|&k| Ok(fit_boundary_exponent(&sol, k as f64 * noise.step(), Some(window))?[0]))
        .collect::<Result<Vec<_>>>()?;
    let median = stats::median(&fits.iter().map(|f| f.alpha).collect::<Vec<_>>());
    Ok(PathFits { path, fits, median })
}

fn summarize(lambda: Option<f64>, paths: Vec<PathFits>) -> KrylovSummary {
    let meds: Vec<f64> = paths.iter().map(|p| p.median).collect();
    KrylovSummary {
        lambda,
        threshold: lambda.map(krylov_threshold),
        median: stats::median(&meds),
        lower_quartile: stats::quantile(&meds, 0.25),
        paths,
    }
}

/// Exponent ensembles of `du = D²u dt + √(2−λ) Du dW` on `(0, x_max)` with the bump
/// initial condition, one summary per `λ`, followed by the deterministic `σ = 0` control.
/// Path `i` uses the same noise for every `λ`.
pub fn krylov_experiment(cfg: &KrylovConfig) -> Result<Vec<KrylovSummary>> {
    if cfg.x_max < 4.0 {
        return param("x_max must be at least 4");
    }
    if cfg.n_paths == 0 {
        return param("need at least one path");
    }
    let mut out = Vec::new();
    for &lambda in &cfg.lambdas {
        if !(lambda > 0.0 && lambda < 1.0) {
            return param(format!("lambda must lie in (0, 1), got {lambda}"));
        }
        let coeffs = CoefficientSet::krylov(lambda);
        let paths = (0..cfg.n_paths).into_par_iter().map(|i| krylov_path(cfg, &coeffs, i)).collect::<Result<Vec<_>>>()?;
        out.push(summarize(Some(lambda), paths));
    }
    let control = CoefficientSet::new(1, 1).with_initial(|x| bump(x[0], KRYLOV_BUMP.0, KRYLOV_BUMP.1)).with_label("krylov-control");
    out.push(summarize(None, vec![krylov_path(cfg, &control, 0)?]));
    Ok(out)
}

/// One-sided bootstrap bounds for the ordering `median α̂(a) < median α̂(b) < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOrdering {
    /// Lower bound on `median(b) − median(a)`, resampling paths jointly.
    pub difference_lower: f64,
    /// Upper bound on `median(b)`.
    pub upper_median: f64,
    pub level: f64,
}

impl KrylovOrdering {
    pub fn holds(&self) -> bool {
        self.difference_lower > 0.0 && self.upper_median < 1.0
    }
}

pub fn krylov_ordering(a: &KrylovSummary, b: &KrylovSummary, resamples: usize, level: f64, seed: u64) -> Result<KrylovOrdering> {
    let (x, y) = (a.per_path(), b.per_path());
    if x.len() != y.len() || x.is_empty() {
        return param("ordering needs two ensembles over the same paths");
    }
    let two_sided = 2.0 * level - 1.0;
    let (difference_lower, _) = stats::bootstrap_paired_median_difference(&x, &y, resamples, two_sided, seed);
    let (_, upper_median) = stats::bootstrap_median(&y, resamples, two_sided, seed);
    Ok(KrylovOrdering { difference_lower, upper_median, level })
}

/// Setup for the smooth-coefficient shell ensemble on `(0, 1)`:
/// `a = 1 + 0.2 sin 2πx`, `σ = 0.5 + 0.2 cos 2πx` (so `a − σ²/2 ≥ 0.555`) and the bump initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellConfig {
    pub cells: usize,
    pub noise_level: i32,
    pub horizon: f64,
    pub record_stride: usize,
    pub t0: f64,
    pub r0: f64,
    pub j_min: u32,
    pub j_max: u32,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ShellConfig {
    fn default() -> Self {
        ShellConfig { cells: 512, noise_level: 13, horizon: 0.5, record_stride: 4, t0: 0.5, r0: 0.5, j_min: 2, j_max: 12, n_paths: 50, seed: 1 }
    }
}

pub fn smooth_coefficients() -> CoefficientSet {
    use std::f64::consts::TAU;
    CoefficientSet::new(1, 1)
        .with_a(|_, x, out| out[0] = 1.0 + 0.2 * (TAU * x[0]).sin())
        .with_sigma(|_, x, out| out[0] = 0.5 + 0.2 * (TAU * x[0]).cos())
        .with_sigma_jacobian(|_, x, out| out[0] = -0.2 * TAU * (TAU * x[0]).sin())
        .with_initial(|x| bump(x[0], KRYLOV_BUMP.0, KRYLOV_BUMP.1))
        .with_label("smooth-shells")
}

/// One shell profile per path.
pub fn shell_ensemble(cfg: &ShellConfig) -> Result<Vec<ShellProfile>> {
    if cfg.n_paths == 0 || cfg.j_min > cfg.j_max {
        return param("need at least one path and a nonempty shell range");
    }
    let coeffs = smooth_coefficients();
    let problem = SpdeProblem::new(Domain::interval(0.0, 1.0), coeffs, cfg.horizon);
    let spec = GridSpec::new(cfg.cells).with_record_stride(cfg.record_stride);
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let noise = generate_path(cfg.seed, i as u64, 1, cfg.noise_level, cfg.horizon)?;
            let sol = solve_recording(&problem, &spec, &noise, |k, last| last || k % cfg.record_stride == 0)?;
            shell_decay_profile(&sol, cfg.t0, cfg.r0, cfg.j_min..=cfg.j_max)
        })
        .collect()
}
