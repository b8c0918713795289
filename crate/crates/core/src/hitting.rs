//! Exit-split probabilities for diffusions started in a small parabolic cylinder
//! `Q_r^p = [0, 2^−p] × B(0, 2^(−p/2) r)` next to a half-space target, and the
//! barrier function that bounds them.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, LabError, Result};
use crate::rng::{self, tag};
use crate::stats::Estimate;

/// `6u⁵ − 15u⁴ + 10u³` clamped to `[0, 1]`.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

fn check_geometry(r: f64, c: f64) -> Result<()> {
    if !(c >= 1.0) || !(r >= 7.0 * c) {
        return param(format!("need c >= 1 and r >= 7c, got c = {c}, r = {r}"));
    }
    Ok(())
}

/// Profile pair `(φ(a), ψ(a))` of the barrier.
pub fn barrier_profile(a: f64, r: f64, c: f64) -> (f64, f64) {
    let a = a.abs();
    let (lo, hi) = (5.0 * r / 7.0, 6.0 * r / 7.0);
    if a >= hi {
        return (1.0, c + 1.0);
    }
    let inner = 1.0 / (c + (r * r - a * a).sqrt());
    if a <= lo {
        return (inner, c);
    }
    let s = smoothstep((a - lo) / (hi - lo));
    ((1.0 - s) * inner + s, c + s)
}

/// `f(y) = φ(|ỹ|)(y₁ + ψ(|ỹ|))` with `ỹ = (y₂, …, y_d)`.
pub fn barrier_value(y: &[f64], r: f64, c: f64) -> f64 {
    let tail = y[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let (phi, psi) = barrier_profile(tail, r, c);
    phi * (y[0] + psi)
}

/// `m = max f` over the half-ball `|y| ≤ r/√2`, with the positivity check of
/// `c√(r²/2 + y₁²) − c y₁ + r²/2` behind the monotonicity of the reduced profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierMax {
    pub m: f64,
    /// Smallest numerator value on a grid of `[−r/√2, r/√2]`.
    pub min_numerator: f64,
    /// Root candidate `(r²/4 − c²/2)/c` of the squared numerator equation.
    pub critical_y1: f64,
    pub numerator_at_critical: f64,
}

fn numerator(y1: f64, r: f64, c: f64) -> f64 {
    c * (r * r / 2.0 + y1 * y1).sqrt() - c * y1 + r * r / 2.0
}

pub fn barrier_max(r: f64, c: f64) -> Result<BarrierMax> {
    check_geometry(r, c)?;
    let half = r / 2f64.sqrt();
    let n = 10_000;
    let min_numerator = (0..=n).map(|i| numerator(-half + 2.0 * half * i as f64 / n as f64, r, c)).fold(f64::INFINITY, f64::min);
    if !(min_numerator > 0.0) {
        return Err(LabError::Validation(format!("barrier profile is not monotone: numerator {min_numerator}")));
    }
    let critical_y1 = (r * r / 4.0 - c * c / 2.0) / c;
    Ok(BarrierMax { m: (half + c) / (c + r), min_numerator, critical_y1, numerator_at_critical: numerator(critical_y1, r, c) })
}

/// Drift bound `C₀ = (1 − m)/(2Ĉ)` and the grid estimate `Ĉ` it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCap {
    pub c0: f64,
    pub c_hat: f64,
    /// Largest grid value before the Lipschitz slack was added.
    pub grid_sup: f64,
    pub m: f64,
}

/// Pointwise Itô drift bound of `f(ξ)` per unit drift bound: `|∇f| + ½Δ·max(Σλ⁺, Σ|λ⁻|)`
/// over the eigenvalues `λ` of `∇²f`, the largest `|½ tr(a a* ∇²f)|` for `0 ≤ a a* ≤ ΔI`.
fn ito_bound(y: &[f64], r: f64, c: f64, big_delta: f64) -> f64 {
    let d = y.len();
    let eps = 1e-4 * r;
    let f = |z: &[f64]| barrier_value(z, r, c);
    let mut z = y.to_vec();
    let mut grad = 0.0;
    let mut hess = DMatrix::zeros(d, d);
    let f0 = f(y);
    for i in 0..d {
        z[i] = y[i] + eps;
        let fp = f(&z);
        z[i] = y[i] - eps;
        let fm = f(&z);
        z[i] = y[i];
        grad += ((fp - fm) / (2.0 * eps)).powi(2);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (eps * eps);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                z[i] = y[i] + si * eps;
                z[j] = y[j] + sj * eps;
                let v = f(&z);
                z[i] = y[i];
                z[j] = y[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * eps * eps);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(hess).eigenvalues;
    let pos: f64 = eig.iter().filter(|l| **l > 0.0).sum();
    let neg: f64 = -eig.iter().filter(|l| **l < 0.0).sum::<f64>();
    grad.sqrt() + 0.5 * big_delta * pos.max(neg)
}

/// `C₀(r, c, d, Δ)` with `Ĉ` the grid sup of [`ito_bound`] over the ball `B_r`, plus the
/// largest jump between neighbouring grid values as Lipschitz slack. The barrier depends
/// on `(y₁, |ỹ|)` only, so the grid lives in that half-disk.
pub fn drift_cap(r: f64, c: f64, d: usize, big_delta: f64) -> Result<DriftCap> {
    let m = barrier_max(r, c)?.m;
    if d == 0 || !(big_delta >= 0.0) {
        return param("need d >= 1 and Delta >= 0");
    }
    let n = 200;
    let rho_n = if d == 1 { 0 } else { n / 2 };
    let mut grid = vec![f64::NAN; (n + 1) * (rho_n + 1)];
    let mut y = vec![0.0; d];
    for j in 0..=rho_n {
        let rho = if rho_n == 0 { 0.0 } else { r * j as f64 / rho_n as f64 };
        for i in 0..=n {
            let y1 = -r + 2.0 * r * i as f64 / n as f64;
            if y1 * y1 + rho * rho > r * r * (1.0 + 1e-12) {
                continue;
            }
            y[0] = y1;
            if d > 1 {
                y[1] = rho;
            }
            grid[j * (n + 1) + i] = ito_bound(&y, r, c, big_delta);
        }
    }
    let grid_sup = grid.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut slack: f64 = 0.0;
    for j in 0..=rho_n {
        for i in 0..=n {
            let v = grid[j * (n + 1) + i];
            for w in [(i < n).then(|| grid[j * (n + 1) + i + 1]), (j < rho_n).then(|| grid[(j + 1) * (n + 1) + i])].into_iter().flatten() {
                if v.is_finite() && w.is_finite() {
                    slack = slack.max((v - w).abs());
                }
            }
        }
    }
    let c_hat = grid_sup + slack;
    Ok(DriftCap { c0: (1.0 - m) / (2.0 * c_hat), c_hat, grid_sup, m })
}

pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Half-space target `{(s, y) : ⟨y, n⟩ ≥ level}` intersected with the cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub level: f64,
}

impl HalfSpace {
    /// Distance to the target along the normal; `≤ 0` inside.
    pub fn gap(&self, y: &[f64]) -> f64 {
        self.level - self.normal.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Setup of one exit-split experiment.
#[derive(Clone)]
pub struct HittingExperiment {
    pub p: u32,
    pub r: f64,
    pub c: f64,
    pub dim: usize,
    pub target: HalfSpace,
    /// Drift `b(t, y)`; its magnitude must stay below `drift_bound · 2^(p/2)`.
    pub drift: Option<VectorField>,
    /// Diffusion matrix `a(t, y)`, row-major; `None` is the identity.
    pub diffusion: Option<VectorField>,
    pub drift_bound: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub start_time: f64,
    pub start: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
    /// Brownian-bridge crossing tests between grid points.
    pub bridge: bool,
}

impl std::fmt::Debug for HittingExperiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HittingExperiment")
            .field("p", &self.p)
            .field("r", &self.r)
            .field("c", &self.c)
            .field("dim", &self.dim)
            .field("target", &self.target)
            .field("start", &(self.start_time, &self.start))
            .field("n_paths", &self.n_paths)
            .field("dt", &self.dt)
            .finish()
    }
}

impl HittingExperiment {
    /// Standard Brownian motion in `d` dimensions at level `p`, target face `⟨y, −e₁⟩ ≥ c 2^(−p/2)`,
    /// started at the origin at time 0 with `dt = 10⁻³ · 2^−p`.
    pub fn brownian(d: usize, p: u32, c: f64, r: f64, n_paths: usize, seed: u64) -> Self {
        let mut normal = vec![0.0; d];
        normal[0] = -1.0;
        let scale = 2f64.powi(-(p as i32));
        HittingExperiment {
            p,
            r,
            c,
            dim: d,
            target: HalfSpace { normal, level: c * scale.sqrt() },
            drift: None,
            diffusion: None,
            drift_bound: 0.0,
            delta: 1.0,
            big_delta: 1.0,
            start_time: 0.0,
            start: vec![0.0; d],
            n_paths,
            dt: 1e-3 * scale,
            seed,
            stream: 0,
            bridge: true,
        }
    }

    pub fn horizon(&self) -> f64 {
        2f64.powi(-(self.p as i32))
    }

    pub fn radius(&self) -> f64 {
        self.horizon().sqrt() * self.r
    }

    pub fn validate(&self) -> Result<()> {
        check_geometry(self.r, self.c)?;
        let d = self.dim;
        if d == 0 || self.start.len() != d || self.target.normal.len() != d {
            return param("dimension mismatch in hitting experiment");
        }
        if self.n_paths == 0 {
            return param("need at least one path");
        }
        if !(self.dt > 0.0) {
            return param("dt must be positive");
        }
        let norm = self.target.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return param(format!("target normal must be a unit vector, |n| = {norm}"));
        }
        if self.target.level > self.c * self.horizon().sqrt() * (1.0 + 1e-12) {
            return param("target must contain the face {<y, n> >= c 2^(-p/2)}");
        }
        if !(self.drift_bound >= 0.0) || !(self.delta > 0.0) || !(self.delta <= self.big_delta) {
            return param("need C >= 0 and 0 < delta <= Delta");
        }
        let half = self.horizon() / 2.0;
        let start_norm = self.start.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(0.0..=half).contains(&self.start_time) || start_norm > half.sqrt() * self.r * (1.0 + 1e-12) {
            return param("start must lie in Q_r^(p+1)");
        }
        Ok(())
    }
}

/// Where a path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Target,
    Sphere,
    Horizon,
}

/// Monte Carlo estimate of `P(stop point ∉ A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub p_not_through_a: Estimate,
    pub target: usize,
    pub sphere: usize,
    pub horizon: usize,
}

impl HittingEstimate {
    pub fn csv_header() -> &'static str {
        "c,r,p,d,delta,Delta,n_paths,p_not_through_A,se,seed"
    }

    pub fn csv_row(&self, exp: &HittingExperiment) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            exp.c, exp.r, exp.p, exp.dim, exp.delta, exp.big_delta, exp.n_paths, self.p_not_through_a.mean, self.p_not_through_a.se, exp.seed
        )
    }
}

fn eigen_range(d: usize, m: &[f64]) -> (f64, f64) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let half = 0.5 * (m[0] + m[3]);
            let rad = (0.25 * (m[0] - m[3]).powi(2) + m[1] * m[2]).max(0.0).sqrt();
            (half - rad, half + rad)
        }
        _ => {
            let e = SymmetricEigen::new(DMatrix::from_row_slice(d, d, m)).eigenvalues;
            (e.min(), e.max())
        }
    }
}

struct Scratch {
    y: Vec<f64>,
    next: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
    aa: Vec<f64>,
    b: Vec<f64>,
}

fn quad(d: usize, aa: &[f64], u: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += u[i] * aa[i * d + j] * u[j];
        }
    }
    s
}

fn simulate_path(exp: &HittingExperiment, i: usize, sc: &mut Scratch) -> Result<Stop> {
    let d = exp.dim;
    let radius = exp.radius();
    let end = exp.horizon();
    let bound = exp.drift_bound * 2f64.powf(exp.p as f64 / 2.0);
    let mut rng = rng::substream(exp.seed, exp.stream, tag::HITTING, i as u64);
    sc.y.copy_from_slice(&exp.start);
    if exp.target.gap(&sc.y) <= 0.0 {
        return Ok(Stop::Target);
    }
    let span = end - exp.start_time;
    if span <= 0.0 {
        return Ok(Stop::Horizon);
    }
    let steps = (span / exp.dt).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let sq = h.sqrt();
    for k in 0..steps {
        let s = exp.start_time + k as f64 * h;
        for z in sc.z.iter_mut() {
            *z = rng::normal(&mut rng);
        }
        let (u_target, u_sphere) = (rng::open01(&mut rng), rng::open01(&mut rng));
        match &exp.diffusion {
            Some(a) => a(s, &sc.y, &mut sc.a),
            None => {
                sc.a.fill(0.0);
                for j in 0..d {
                    sc.a[j * d + j] = 1.0;
                }
            }
        }
        for r in 0..d {
            for col in 0..d {
                sc.aa[r * d + col] = (0..d).map(|l| sc.a[r * d + l] * sc.a[col * d + l]).sum();
            }
        }
        let (lmin, lmax) = eigen_range(d, &sc.aa);
        if lmin < exp.delta * (1.0 - 1e-9) || lmax > exp.big_delta * (1.0 + 1e-9) {
            return param(format!("diffusion bounds violated at t = {s}: eigenvalues in [{lmin}, {lmax}]"));
        }
        match &exp.drift {
            Some(b) => {
                b(s, &sc.y, &mut sc.b);
                let nb = sc.b.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nb > bound * (1.0 + 1e-9) {
                    return param(format!("drift bound violated at t = {s}: |b| = {nb} > {bound}"));
                }
            }
            None => sc.b.fill(0.0),
        }
        for r in 0..d {
            sc.next[r] = sc.y[r] + sc.b[r] * h + sq * (0..d).map(|l| sc.a[r * d + l] * sc.z[l]).sum::<f64>();
        }
        let g0 = exp.target.gap(&sc.y);
        let g1 = exp.target.gap(&sc.next);
        let n0 = sc.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1 = sc.next.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (r0, r1) = (radius - n0, radius - n1);
        let hit_target = if g1 <= 0.0 {
            Some(g0 / (g0 - g1))
        } else if exp.bridge {
            let v = quad(d, &sc.aa, &exp.target.normal);
            (u_target < (-2.0 * g0 * g1 / (v * h)).exp()).then_some(0.5)
        } else {
            None
        };
        let hit_sphere = if r1 <= 0.0 {
            Some(r0 / (r0 - r1))
        } else if exp.bridge && n0 > 0.0 {
            let dir: Vec<f64> = sc.y.iter().map(|v| v / n0).collect();
            let v = quad(d, &sc.aa, &dir);
            (u_sphere < (-2.0 * r0 * r1 / (v * h)).exp()).then_some(0.5)
        } else {
            None
        };
        match (hit_target, hit_sphere) {
            (Some(a), Some(b)) => return Ok(if a <= b { Stop::Target } else { Stop::Sphere }),
            (Some(_), None) => return Ok(Stop::Target),
            (None, Some(_)) => return Ok(Stop::Sphere),
            (None, None) => {}
        }
        std::mem::swap(&mut sc.y, &mut sc.next);
    }
    Ok(Stop::Horizon)
}

/// Stop classification of every path, in path order.
pub fn simulate_stops(exp: &HittingExperiment) -> Result<Vec<Stop>> {
    exp.validate()?;
    let d = exp.dim;
    (0..exp.n_paths)
        .into_par_iter()
        .map_init(
            || Scratch { y: vec![0.0; d], next: vec![0.0; d], z: vec![0.0; d], a: vec![0.0; d * d], aa: vec![0.0; d * d], b: vec![0.0; d] },
            |sc, i| simulate_path(exp, i, sc),
        )
        .collect()
}

/// Euler–Maruyama estimate of the probability that the path stops outside the target,
/// either on the sphere or at the final time.
pub fn run_hitting_mc(exp: &HittingExperiment) -> Result<HittingEstimate> {
    let stops = simulate_stops(exp)?;
    let xs: Vec<f64> = stops.iter().map(|s| if *s == Stop::Target { 0.0 } else { 1.0 }).collect();
    Ok(HittingEstimate {
        p_not_through_a: Estimate::from_samples(&xs),
        target: stops.iter().filter(|s| **s == Stop::Target).count(),
        sphere: stops.iter().filter(|s| **s == Stop::Sphere).count(),
        horizon: stops.iter().filter(|s| **s == Stop::Horizon).count(),
    })
}

/// Probability that standard Brownian motion started at `x ∈ (lo, hi)` at time 0 is not
/// absorbed at `lo` before time `horizon`, with `hi` counted as a non-target exit:
/// `q_s + ½ q_yy = 0`, `q(·, lo) = 0`, `q(·, hi) = 1`, `q(horizon, ·) = 1`.
/// Implicit Euler for the first steps, then Crank–Nicolson.
pub fn exit_split_oracle(lo: f64, hi: f64, horizon: f64, x: f64, cells: usize, steps: usize) -> Result<f64> {
    if !(lo < x && x < hi) || cells < 4 || steps < 8 {
        return param("need lo < x < hi, cells >= 4, steps >= 8");
    }
    let h = (hi - lo) / cells as f64;
    let dt = horizon / steps as f64;
    let n = cells - 1;
    let mut q = vec![1.0; n];
    let mut scratch = Vec::new();
    for k in 0..steps {
        let theta = if k < 4 { 1.0 } else { 0.5 };
        let lam = 0.5 * dt / (h * h);
        let off = vec![-theta * lam; n];
        let diag = vec![1.0 + 2.0 * theta * lam; n];
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { q[i - 1] };
                let right = if i + 1 == n { 1.0 } else { q[i + 1] };
                q[i] + (1.0 - theta) * lam * (left - 2.0 * q[i] + right)
            })
            .collect();
        rhs[n - 1] += theta * lam;
        crate::linalg::solve_tridiagonal(&off, &diag, &off, &mut rhs, &mut scratch).ok_or_else(|| LabError::Numerical { t: k as f64 * dt, reason: "tridiagonal solve".into() })?;
        q = rhs;
    }
    let pos = (x - lo) / h - 1.0;
    let i = (pos.floor().max(0.0) as usize).min(n - 2);
    let w = pos - i as f64;
    Ok((1.0 - w) * q[i] + w * q[i + 1])
}

#[cfg(test)]
mod tests;
