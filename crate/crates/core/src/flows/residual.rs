use serde::{Deserialize, Serialize};

use super::{integrate_forward, FlowField, FlowSpec, Lattice};
use crate::error::{param, LabError, Result};
use crate::noise::WienerPath;
use crate::solver::CoefficientSet;
use crate::stats::{fit_line, LineFit};

/// `max_x |X_{t,v}(X_{s,t}(x)) − X_{s,v}(x)|` over the lattice, with the outer
/// flow integrated on the bounding lattice of the inner images and interpolated.
pub fn composition_residual(
    coeffs: &CoefficientSet,
    noise: &WienerPath,
    lattice: &Lattice,
    (s, t, v): (f64, f64, f64),
    noise_stride: usize,
) -> Result<f64> {
    if !(s <= t && t <= v) {
        return param(format!("need s <= t <= v, got {s}, {t}, {v}"));
    }
    let d = lattice.dim();
    let inner = integrate_forward(coeffs, noise, &FlowSpec::new(lattice.clone(), s, t).with_noise_stride(noise_stride).with_record_stride(usize::MAX))?;
    let images = &inner.last().snapshot().x;
    let outer_lattice = lattice.covering(images, 2);
    let outer = integrate_forward(coeffs, noise, &FlowSpec::new(outer_lattice, t, v).with_noise_stride(noise_stride).with_record_stride(usize::MAX))?;
    let direct = integrate_forward(coeffs, noise, &FlowSpec::new(lattice.clone(), s, v).with_noise_stride(noise_stride).with_record_stride(usize::MAX))?;
    let outer_view = outer.last();
    let target = &direct.last().snapshot().x;
    let mut worst: f64 = 0.0;
    for p in 0..lattice.len() {
        let composed = outer_view.position(&images[p * d..(p + 1) * d]);
        let err = (0..d).map(|i| (composed[i] - target[p * d + i]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(err);
    }
    Ok(worst)
}

fn snapshot_at<'a>(flow: &'a FlowField, t: f64) -> Result<&'a super::Snapshot> {
    flow.index_at(t)
        .map(|i| flow.snapshot(i))
        .ok_or_else(|| LabError::Parameter(format!("time {t} is not recorded in the flow")))
}

/// `σ_s(X_s(y)) (W_t − W_{t'})` for every lattice point, row-major.
fn loaded_increment(flow: &FlowField, coeffs: &CoefficientSet, noise: &WienerPath, s: f64, t: f64, t2: f64) -> Result<Vec<f64>> {
    let d = flow.dim();
    let d1 = coeffs.noise_dim();
    let snap = snapshot_at(flow, s)?;
    let dw: Vec<f64> = (0..d1).map(|k| noise.value(k, t) - noise.value(k, t2)).collect();
    let mut sig = vec![0.0; d * d1];
    let mut out = vec![0.0; flow.lattice().len() * d];
    for p in 0..flow.lattice().len() {
        coeffs.eval_sigma(s, &snap.x[p * d..(p + 1) * d], &mut sig);
        for i in 0..d {
            out[p * d + i] = (0..d1).map(|k| sig[i * d1 + k] * dw[k]).sum();
        }
    }
    Ok(out)
}

fn sup_norm(d: usize, v: &[f64]) -> f64 {
    v.chunks(d).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// `D_{s,t} = sup_y |X_t(y) − X_s(y) + σ_s(X_s(y))(W_t − W_s)|` over the lattice.
pub fn increment_residual(flow: &FlowField, coeffs: &CoefficientSet, noise: &WienerPath, s: f64, t: f64) -> Result<f64> {
    let d = flow.dim();
    let (xs, xt) = (&snapshot_at(flow, s)?.x, &snapshot_at(flow, t)?.x);
    let load = loaded_increment(flow, coeffs, noise, s, t, s)?;
    let diff: Vec<f64> = (0..xs.len()).map(|i| xt[i] - xs[i] + load[i]).collect();
    Ok(sup_norm(d, &diff))
}

/// `E_{s,s',t,t'} = sup_y |(σ_s(X_s(y)) − σ_{s'}(X_{s'}(y)))(W_t − W_{t'})|`.
pub fn chaining_term(flow: &FlowField, coeffs: &CoefficientSet, noise: &WienerPath, (s, s2): (f64, f64), (t, t2): (f64, f64)) -> Result<f64> {
    let a = loaded_increment(flow, coeffs, noise, s, t, t2)?;
    let b = loaded_increment(flow, coeffs, noise, s2, t, t2)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(sup_norm(flow.dim(), &diff))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementSample {
    pub s: f64,
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IncrementFit {
    /// Every residual vanished to rounding: `σ` is affine in the state.
    ExactCancellation,
    /// Slope of `log D_{s,t}` against `log (t − s)`.
    Fitted(LineFit),
}

/// Residual increments for the sampled pairs and their fitted Hölder exponent.
pub fn residual_increment_exponent(
    flow: &FlowField,
    coeffs: &CoefficientSet,
    noise: &WienerPath,
    pairs: &[(f64, f64)],
) -> Result<(Vec<IncrementSample>, IncrementFit)> {
    let samples = pairs
        .iter()
        .map(|&(s, t)| {
            if !(t > s) {
                return param(format!("increment pair needs s < t, got ({s}, {t})"));
            }
            Ok(IncrementSample { s, t, residual: increment_residual(flow, coeffs, noise, s, t)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = flow.lattice().diameter().max(1.0);
    let usable: Vec<&IncrementSample> = samples.iter().filter(|p| p.residual > 1e-12 * scale).collect();
    if usable.is_empty() {
        return Ok((samples, IncrementFit::ExactCancellation));
    }
    let xs: Vec<f64> = usable.iter().map(|p| (p.t - p.s).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.residual.ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or(LabError::InsufficientPoints { needed: 2, found: usable.len() })?;
    Ok((samples, IncrementFit::Fitted(fit)))
}
