//! Monte Carlo evaluation of the probabilistic solution along backward
//! characteristics stopped at the exit from the (possibly moving) domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{param, LabError, Result};
use crate::flows::{backward_flow, BackwardConfig, Characteristic, CharacteristicField, Region, StaticField};
use crate::rng::{self, tag};
use crate::solver::CoefficientSet;
use crate::stats::Estimate;

/// Normalisation of the characteristics' diffusion relative to `ā`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `ρ̂ρ̂* = 2ā`: generator `ā^{ij} D_i D_j`, matching the operator without a ½.
    Doubled,
    /// `ρ̂ρ̂* = ā`.
    Plain,
}

impl Convention {
    pub fn scale(self) -> f64 {
        match self {
            Convention::Doubled => std::f64::consts::SQRT_2,
            Convention::Plain => 1.0,
        }
    }
}

/// Evaluation point and Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkQuery {
    pub t: f64,
    pub x: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Identifies the frozen driving path; backward noise is keyed on it.
    pub stream: u64,
    pub convention: Convention,
    pub bridge: bool,
}

impl FkQuery {
    pub fn new(t: f64, x: Vec<f64>, n_paths: usize, dt: f64, seed: u64) -> Self {
        FkQuery { t, x, n_paths, dt, seed, stream: 0, convention: Convention::Doubled, bridge: true }
    }

    fn config(&self) -> BackwardConfig {
        BackwardConfig { dt: self.dt, diffusion_scale: self.convention.scale(), bridge: self.bridge }
    }
}

fn characteristics(field: &dyn CharacteristicField, region: &dyn Region, q: &FkQuery) -> Result<Vec<Characteristic>> {
    if q.n_paths == 0 {
        return param("path count must be positive");
    }
    let cfg = q.config();
    (0..q.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(q.seed, q.stream, tag::BACKWARD, i);
            backward_flow(field, region, q.t, &q.x, &cfg, &mut r)
        })
        .collect()
}

/// Mean payoff `ψ(U_{t,0}) 1{τ = 0} + ∫_τ^t φ` over independent characteristics.
pub fn mc_value(field: &dyn CharacteristicField, region: &dyn Region, q: &FkQuery) -> Result<Estimate> {
    let payoffs: Vec<f64> = characteristics(field, region, q)?.iter().map(|c| c.payoff).collect();
    Ok(Estimate::from_samples(&payoffs))
}

/// Empirical law of exit times and locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitStatistics {
    /// Fraction of characteristics that left the region before reaching time 0.
    pub exit_probability: Estimate,
    /// `τ` per path (0 for survivors).
    pub exit_times: Vec<f64>,
    pub exit_points: Vec<Vec<f64>>,
}

impl ExitStatistics {
    /// Counts of exit points by first coordinate over `bins` equal bins of `[lo, hi]`;
    /// points outside are clamped into the end bins.
    pub fn histogram(&self, bins: usize, lo: f64, hi: f64) -> Vec<usize> {
        let mut out = vec![0; bins];
        for p in &self.exit_points {
            let b = ((p[0] - lo) / (hi - lo) * bins as f64).floor();
            out[(b.max(0.0) as usize).min(bins - 1)] += 1;
        }
        out
    }
}

pub fn exit_statistics(field: &dyn CharacteristicField, region: &dyn Region, q: &FkQuery) -> Result<ExitStatistics> {
    let chars = characteristics(field, region, q)?;
    let exited: Vec<f64> = chars.iter().map(|c| if c.exit_point.is_some() { 1.0 } else { 0.0 }).collect();
    Ok(ExitStatistics {
        exit_probability: Estimate::from_samples(&exited),
        exit_times: chars.iter().map(|c| c.exit_time).collect(),
        exit_points: chars.iter().filter_map(|c| c.exit_point.clone()).collect(),
    })
}

/// `P(no exit from (0,1) by time t)` for characteristics with generator `D²`
/// started at `x`: `Σ_{n odd} 4/(nπ) sin(nπx) e^{−n²π²t}`.
pub fn survival_probability(x: f64, t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (0..400)
        .map(|j| {
            let n = (2 * j + 1) as f64;
            4.0 / (n * pi) * (n * pi * x).sin() * (-n * n * pi * pi * t).exp()
        })
        .sum()
}

/// Outcome of the factor-convention calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub chosen: Convention,
    pub oracle: f64,
    pub doubled: Estimate,
    pub plain: Estimate,
}

/// Runs the heat equation on `(0, 1)` with `ψ = sin(πx)` at `(0.1, 0.5)` under both
/// conventions and selects the one whose estimate is within 3 SE of `e^{−π²/10}`.
pub fn calibrate_convention(n_paths: usize, dt: f64, seed: u64) -> Result<Calibration> {
    let coeffs = CoefficientSet::heat(0.0, 1.0);
    let field = StaticField { coeffs: &coeffs };
    let domain = Domain::interval(0.0, 1.0);
    let oracle = (-std::f64::consts::PI.powi(2) * 0.1).exp();
    let mut q = FkQuery::new(0.1, vec![0.5], n_paths, dt, seed);
    let doubled = mc_value(&field, &domain, &q)?;
    q.convention = Convention::Plain;
    let plain = mc_value(&field, &domain, &q)?;
    let chosen = match (doubled.within(oracle, 3.0, 0.0), plain.within(oracle, 3.0, 0.0)) {
        (true, false) => Convention::Doubled,
        (false, true) => Convention::Plain,
        _ => {
            return Err(LabError::Validation(format!(
                "calibration inconclusive: doubled {:.5}±{:.5}, plain {:.5}±{:.5}, oracle {oracle:.5}",
                doubled.mean, doubled.se, plain.mean, plain.se
            )))
        }
    };
    Ok(Calibration { chosen, oracle, doubled, plain })
}

#[cfg(test)]
mod tests;
