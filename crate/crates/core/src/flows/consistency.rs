use serde::{Deserialize, Serialize};

use super::{integrate_forward, invert_point, solve_transformed, FlowSpec, Lattice};
use crate::domain::Domain;
use crate::error::Result;
use crate::noise::generate_path;
use crate::solver::{solve, CoefficientSet, GridSpec, SpdeProblem};

/// Linear SPDE on `(0, 1)` with constant `a`, constant loading `σ`, constant
/// source and `ψ = sin(πx)`, solved directly and through the flow transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub a: f64,
    pub sigma: f64,
    pub source: f64,
    pub horizon: f64,
    pub cells: usize,
    pub noise_level: i32,
    pub probes: Vec<f64>,
    pub seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            a: 1.0,
            sigma: 0.5,
            source: 1.0,
            horizon: 0.1,
            cells: 128,
            noise_level: 11,
            probes: vec![0.2, 0.35, 0.5, 0.65, 0.8],
            seed: 0,
        }
    }
}

impl ConsistencyConfig {
    pub fn coefficients(&self) -> CoefficientSet {
        let source = self.source;
        CoefficientSet::new(1, 1)
            .with_constant_a(vec![self.a])
            .with_constant_sigma(vec![self.sigma])
            .with_drift(move |_, _, _, _| source)
            .with_initial(|x| (std::f64::consts::PI * x[0]).sin())
            .with_label("constant-loading")
    }
}

/// Probe-wise `u_T(x)` and `v_T(X_T⁻¹(x))` for one noise path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySample {
    pub path: u64,
    pub probes: Vec<f64>,
    pub direct: Vec<f64>,
    pub transformed: Vec<f64>,
}

impl ConsistencySample {
    pub fn sup_gap(&self) -> f64 {
        self.direct.iter().zip(&self.transformed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn transformation_consistency(cfg: &ConsistencyConfig, path: u64) -> Result<ConsistencySample> {
    let domain = Domain::interval(0.0, 1.0);
    let coeffs = cfg.coefficients();
    let noise = generate_path(cfg.seed, path, 1, cfg.noise_level, cfg.horizon)?;
    let direct = solve(&SpdeProblem::new(domain, coeffs.clone(), cfg.horizon), &GridSpec::new(cfg.cells).with_record_stride(usize::MAX), &noise)?;

    // X_t(y) = y − σW_t, so the moving domain is G + σW_t
    let h = 1.0 / cfg.cells as f64;
    let w = noise.values(0);
    let (wmin, wmax) = w.iter().fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let (lo, hi) = ((cfg.sigma * wmin).min(cfg.sigma * wmax), (cfg.sigma * wmin).max(cfg.sigma * wmax));
    let lo = (lo / h).floor() * h - 2.0 * h;
    let hi = 1.0 + (hi / h).ceil() * h + 2.0 * h;
    let cells = ((hi - lo) / h).round() as usize;
    let flow = integrate_forward(&coeffs, &noise, &FlowSpec::new(Lattice::line(lo, hi, cells), 0.0, cfg.horizon))?;
    let v = solve_transformed(&coeffs, &domain, &flow)?;

    let last = v.values.len() - 1;
    let mut d_vals = Vec::new();
    let mut t_vals = Vec::new();
    for &x in &cfg.probes {
        let y = invert_point(&flow, cfg.horizon, &[x])?;
        t_vals.push(v.value(last, y[0]));
        let pos = x / h;
        let i = (pos.floor() as usize).min(cfg.cells - 1);
        let s = pos - i as f64;
        let u = direct.final_values();
        d_vals.push(u[i] * (1.0 - s) + u[i + 1] * s);
    }
    Ok(ConsistencySample { path, probes: cfg.probes.clone(), direct: d_vals, transformed: t_vals })
}
