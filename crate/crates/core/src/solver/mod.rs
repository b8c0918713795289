//! Finite-difference solver for Dirichlet SPDEs of the form
//! `du = (a^{ij} D_i D_j u + f(u, ∇u)) dt + (σ^{ik} D_i u + g^k(u)) dW^k`.
//!
//! The second-order term is implicit; `f`, `g` and the gradient-noise term
//! are explicit at the previous state. Lattice nodes outside the open domain
//! carry the Dirichlet value 0 at every recorded time.

mod coefficients;
mod grid;
mod stepper;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coefficients::{bump, truncate_nonlinearity, CoefficientSet, DriftFn, InitialFn, MatrixField, NoiseFn, KRYLOV_BUMP};
pub use grid::{Grid, GridSolution, GridSpec};

use crate::domain::Domain;
use crate::error::{param, LabError, Result};
use crate::linalg;
use crate::noise::WienerPath;
use stepper::Stepper;

/// Domain, coefficients and horizon.
#[derive(Debug, Clone)]
pub struct SpdeProblem {
    pub domain: Domain,
    pub coeffs: CoefficientSet,
    pub horizon: f64,
}

impl SpdeProblem {
    pub fn new(domain: Domain, coeffs: CoefficientSet, horizon: f64) -> Self {
        SpdeProblem { domain, coeffs, horizon }
    }
}

/// Minimum over `samples` of the smallest eigenvalue of `a − ½σσ*`.
pub fn coercivity_gap(coeffs: &CoefficientSet, samples: &[(f64, Vec<f64>)]) -> Result<f64> {
    if samples.is_empty() {
        return param("coercivity check needs at least one sample point");
    }
    let d = coeffs.dim();
    let mut gap = f64::INFINITY;
    let mut a = vec![0.0; d * d];
    for (t, x) in samples {
        coeffs.eval_a(*t, x, &mut a);
        let am = linalg::to_matrix(d, d, &a);
        if !linalg::is_symmetric(&am, 1e-12) {
            return Err(LabError::Validation(format!("diffusion matrix not symmetric at t = {t}, x = {x:?}")));
        }
        let abar: DMatrix<f64> = linalg::to_matrix(d, d, &coeffs.reduced_diffusion(*t, x));
        gap = gap.min(linalg::min_eigenvalue(&abar));
    }
    Ok(gap)
}

/// Interior lattice nodes at a few times, for coercivity checks.
pub fn lattice_samples(domain: &Domain, grid: &Grid, times: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    for &t in times {
        for x in grid.positions() {
            if domain.inside(&x) {
                out.push((t, x));
            }
        }
    }
    out
}

/// One implicit step of all lattice values from `t` to `t + dt`.
pub fn step(state: &[f64], t: f64, dt: f64, dw: &[f64], coeffs: &CoefficientSet, domain: &Domain, grid: &Grid) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return param(format!("time step must be positive, got {dt}"));
    }
    if dw.len() != coeffs.noise_dim() {
        return param(format!("expected {} noise increments, got {}", coeffs.noise_dim(), dw.len()));
    }
    let mut u = state.to_vec();
    Stepper::new(coeffs, domain, grid)?.step(&mut u, t, dt, dw)?;
    Ok(u)
}

/// Runs the scheme over `[0, T]` on the noise grid (time step = `noise_stride` noise steps).
pub fn solve(problem: &SpdeProblem, spec: &GridSpec, noise: &WienerPath) -> Result<GridSolution> {
    let stride = spec.record_stride;
    solve_recording(problem, spec, noise, |n, last| n % stride.max(1) == 0 || last)
}

/// As [`solve`], keeping the state after step `n` (1-based) whenever `keep(n, is_last)` holds;
/// `spec.record_stride` is ignored.
pub fn solve_recording(problem: &SpdeProblem, spec: &GridSpec, noise: &WienerPath, keep: impl Fn(usize, bool) -> bool) -> Result<GridSolution> {
    let grid = Grid::for_domain(&problem.domain, spec.cells)?;
    let coeffs = &problem.coeffs;
    let psi: Vec<f64> = grid
        .positions()
        .iter()
        .map(|x| if problem.domain.inside(x) { coeffs.psi(x) } else { 0.0 })
        .collect();
    let mut sol = GridSolution {
        domain: problem.domain,
        grid: grid.clone(),
        dt: 0.0,
        times: vec![0.0],
        values: vec![psi.clone()],
        seed: noise.master_seed(),
        stream: noise.stream_id(),
    };
    if problem.horizon == 0.0 {
        return Ok(sol);
    }
    if !(problem.horizon > 0.0) {
        return param(format!("horizon must be nonnegative, got {}", problem.horizon));
    }
    if noise.components() != coeffs.noise_dim() {
        return param(format!("noise has {} components, coefficients expect {}", noise.components(), coeffs.noise_dim()));
    }
    if spec.noise_stride == 0 || spec.record_stride == 0 {
        return param("strides must be positive");
    }
    let dt = noise.step() * spec.noise_stride as f64;
    let steps_f = problem.horizon / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 || steps * spec.noise_stride > noise.intervals() {
        return param(format!("horizon {} is not a multiple of dt = {dt} within the noise grid", problem.horizon));
    }
    let check_times: Vec<f64> = if coeffs.is_time_dependent() { vec![0.0, 0.5 * problem.horizon, problem.horizon] } else { vec![0.0] };
    let gap = coercivity_gap(coeffs, &lattice_samples(&problem.domain, &grid, &check_times))?;
    if !(gap > 0.0) {
        return Err(LabError::Validation(format!("coercivity gap {gap} is not positive on the lattice")));
    }
    sol.dt = dt;
    let mut stepper = Stepper::new(coeffs, &problem.domain, &grid)?;
    let mut u = psi;
    let mut dw = vec![0.0; coeffs.noise_dim()];
    for n in 0..steps {
        let t = n as f64 * dt;
        noise.increment(n * spec.noise_stride, (n + 1) * spec.noise_stride, &mut dw);
        stepper.step(&mut u, t, dt, &dw)?;
        if keep(n + 1, n + 1 == steps) {
            sol.times.push((n + 1) as f64 * dt);
            sol.values.push(u.clone());
        }
    }
    Ok(sol)
}

/// Discrete `sup |u|` and `∫∫ |∇u|² dx dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyNorms {
    pub sup_norm: f64,
    /// Squared `L2([0,T]; H¹)` seminorm, forward differences times cell volume,
    /// trapezoidal in time.
    pub l2_h1_seminorm_sq: f64,
}

impl EnergyNorms {
    pub fn l2_h1_seminorm(&self) -> f64 {
        self.l2_h1_seminorm_sq.sqrt()
    }
}

fn gradient_energy(grid: &Grid, u: &[f64]) -> f64 {
    match *grid {
        Grid::Line { h, nodes, .. } => (0..nodes - 1).map(|i| ((u[i + 1] - u[i]) / h).powi(2)).sum::<f64>() * h,
        Grid::Square { h, side, .. } => {
            let mut s = 0.0;
            for iy in 0..side {
                for ix in 0..side {
                    let i = iy * side + ix;
                    if ix + 1 < side {
                        s += ((u[i + 1] - u[i]) / h).powi(2);
                    }
                    if iy + 1 < side {
                        s += ((u[i + side] - u[i]) / h).powi(2);
                    }
                }
            }
            s * h * h
        }
    }
}

pub fn energy_norms(sol: &GridSolution) -> EnergyNorms {
    let sup_norm = sol.values.iter().flat_map(|r| r.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let e: Vec<f64> = sol.values.iter().map(|u| gradient_energy(&sol.grid, u)).collect();
    let mut integral = 0.0;
    for n in 1..e.len() {
        integral += 0.5 * (e[n] + e[n - 1]) * (sol.times[n] - sol.times[n - 1]);
    }
    EnergyNorms { sup_norm, l2_h1_seminorm_sq: integral }
}

/// Identifies a run for its manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveManifest {
    pub seed: u64,
    pub stream: u64,
    pub domain: Domain,
    pub grid: GridSpec,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub coefficients: String,
    pub scheme: String,
}

impl SolveManifest {
    pub fn new(problem: &SpdeProblem, spec: &GridSpec, sol: &GridSolution) -> Self {
        SolveManifest {
            seed: sol.seed,
            stream: sol.stream,
            domain: problem.domain,
            grid: *spec,
            h: sol.grid.h(),
            dt: sol.dt,
            horizon: problem.horizon,
            coefficients: problem.coeffs.label().to_string(),
            scheme: "drift-implicit Euler-Maruyama, centered gradient noise".into(),
        }
    }
}

/// `sup |u|` of the Krylov problem on `(0, 4)` for each of `n_paths` noise paths
/// (h = 1/128, dt = 2^−13, T = 1/2).
pub fn krylov_sup_norms(lambda: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let problem = SpdeProblem::new(Domain::interval(0.0, 4.0), CoefficientSet::krylov(lambda), 0.5);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let noise = crate::noise::generate_path(seed, i, 1, 12, 0.5)?;
            Ok(energy_norms(&solve(&problem, &GridSpec::new(512).with_record_stride(16), &noise)?).sup_norm)
        })
        .collect()
}

#[cfg(test)]
mod tests;
