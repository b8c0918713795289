//! Dyadic oscillation counts
//! `N_n(x, c, t) = #{k = 0..n : osc_[t−2^−k, t] x > c·2^(−k/2)}`
//! for Brownian paths and for inverse-flow paths normalized by the flow Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, LabError, Result};
use crate::flows::{stream_forward, FlowSpec, Lattice};
use crate::noise::{generate_path, oscillation, ScalarPath, WienerPath};
use crate::solver::CoefficientSet;
use crate::stats;

/// `N_n(path, c, t)` from grid max − min over each lookback interval.
pub fn count_oscillations(path: &ScalarPath, c: f64, t: f64, n: u32) -> Result<u32> {
    if path.step > 2f64.powi(-(n as i32)) * (1.0 + 1e-9) {
        return Err(LabError::Resolution { step: path.step, depth: n });
    }
    if t < 0.0 || t > path.end_time() * (1.0 + 1e-12) {
        return param(format!("t = {t} outside the path window [0, {}]", path.end_time()));
    }
    let mut count = 0;
    for k in 0..=n {
        let len = 2f64.powi(-(k as i32));
        if oscillation(path, t - len, t)? > c * len.sqrt() {
            count += 1;
        }
    }
    Ok(count)
}

/// `e` with `2^e = horizon`.
fn dyadic_exponent(horizon: f64) -> Result<i32> {
    let e = horizon.log2().round() as i32;
    if !(horizon > 0.0) || 2f64.powi(e) != horizon {
        return param(format!("horizon must be a power of two, got {horizon}"));
    }
    Ok(e)
}

/// Counts `N_n` at every `stride`-th grid index for each threshold `cs[i]`, using
/// power-of-two running max/min tables. The path step is `2^−level`, so the window
/// `2^−k` spans `2^(level − k)` intervals. `scale[j]` multiplies the oscillation at the
/// `j`-th sampled time.
fn dyadic_counts(values: &[f64], level: u32, n: u32, stride: usize, cs: &[f64], scale: Option<&[f64]>) -> Result<Vec<Vec<u16>>> {
    let top = level as i32;
    if top < n as i32 {
        return Err(LabError::Resolution { step: 2f64.powi(-top), depth: n });
    }
    let samples = (values.len() - 1) / stride + 1;
    let mut counts = vec![vec![0u16; samples]; cs.len()];
    let (mut mx, mut mn) = (values.to_vec(), values.to_vec());
    let mut w = 0usize;
    for m in 0..=top as u32 {
        let target = 1usize << m;
        // grow the window from w to target = 2w (or 0 → 1)
        let shift = target - w;
        for i in (1..values.len()).rev() {
            let o = i.saturating_sub(shift);
            mx[i] = mx[i].max(mx[o]);
            mn[i] = mn[i].min(mn[o]);
        }
        w = target;
        let k = top as u32 - m;
        if k > n {
            continue;
        }
        let bound = 2f64.powf(-(k as f64) / 2.0);
        for (ci, &c) in cs.iter().enumerate() {
            let thr = c * bound;
            for (j, cnt) in counts[ci].iter_mut().enumerate() {
                let i = j * stride;
                let g = scale.map_or(1.0, |s| s[j]);
                if g * (mx[i] - mn[i]) > thr {
                    *cnt += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Per-sample counts `N_n(path, c, t_j)` on the dyadic time grid of depth `t_depth`.
/// The path must start at time 0 and span a power-of-two horizon on a dyadic grid.
pub fn count_profile(path: &ScalarPath, c: f64, n: u32, t_depth: u32) -> Result<Vec<u32>> {
    let horizon = path.end_time();
    let e = dyadic_exponent(horizon)?;
    let intervals = path.values.len() - 1;
    if !intervals.is_power_of_two() {
        return param("path must have a power-of-two number of intervals");
    }
    let level = intervals.trailing_zeros() as i32 - e;
    if level < 0 {
        return Err(LabError::Resolution { step: path.step, depth: n });
    }
    let stride = t_stride(level as u32, t_depth)?;
    Ok(dyadic_counts(&path.values, level as u32, n, stride, &[c], None)?.remove(0).into_iter().map(u32::from).collect())
}

fn t_stride(level: u32, t_depth: u32) -> Result<usize> {
    let s = level as i32 - t_depth as i32;
    if s < 0 {
        return param(format!("time grid depth {t_depth} is finer than the path depth {level}"));
    }
    Ok(1usize << s)
}

/// Brownian ensemble configuration for [`empirical_pi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub cs: Vec<f64>,
    pub n: u32,
    /// The sup over t runs over multiples of `2^−t_depth`.
    pub t_depth: u32,
    /// The simulated path has step `2^−path_level`; at least `t_depth`.
    pub path_level: u32,
    pub horizon: f64,
    pub seed: u64,
    pub stream: u64,
}

impl EnsembleSpec {
    pub fn new(n_paths: usize, cs: Vec<f64>, n: u32, seed: u64) -> Self {
        EnsembleSpec { n_paths, cs, n, t_depth: n + 2, path_level: n + 2, horizon: 1.0, seed, stream: 0 }
    }
}

/// Sup-ratios `sup_t N_n/(n+1)` of an ensemble at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub c: f64,
    pub n: u32,
    pub t_depth: u32,
    pub sup_ratios: Vec<f64>,
    /// Earliest sampled time attaining the sup, per path.
    pub argmax_t: Vec<f64>,
    pub mean: f64,
    pub q95: f64,
    pub max: f64,
}

impl OscillationReport {
    fn from_paths(c: f64, n: u32, t_depth: u32, sup: Vec<(f64, f64)>) -> Self {
        let (sup_ratios, argmax_t): (Vec<f64>, Vec<f64>) = sup.into_iter().unzip();
        let mean = sup_ratios.iter().sum::<f64>() / sup_ratios.len().max(1) as f64;
        let q95 = if sup_ratios.is_empty() { f64::NAN } else { stats::quantile(&sup_ratios, 0.95) };
        let max = sup_ratios.iter().copied().fold(0.0, f64::max);
        OscillationReport { c, n, t_depth, sup_ratios, argmax_t, mean, q95, max }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path_id,t,c,n,N_n,ratio")?;
        for (i, (r, t)) in self.sup_ratios.iter().zip(&self.argmax_t).enumerate() {
            writeln!(w, "{i},{t},{},{},{},{r}", self.c, self.n, (r * (self.n + 1) as f64).round() as u32)?;
        }
        Ok(())
    }
}

fn sup_of(counts: &[u16], n: u32, dt: f64) -> (f64, f64) {
    let m = counts.iter().copied().max().unwrap_or(0);
    let first = counts.iter().position(|v| *v == m).unwrap_or(0);
    (m as f64 / (n + 1) as f64, first as f64 * dt)
}

fn path_stream(stream: u64, i: usize) -> u64 {
    (stream << 32) | i as u64
}

/// Sup-ratio statistics over `n_paths` Brownian paths, one report per threshold.
pub fn empirical_pi(spec: &EnsembleSpec) -> Result<Vec<OscillationReport>> {
    let e = dyadic_exponent(spec.horizon)?;
    if spec.path_level < spec.t_depth {
        return param("path level must be at least the time grid depth");
    }
    if spec.t_depth < spec.n {
        return param(format!("time grid depth {} gives fewer than 2^{} points per unit time", spec.t_depth, spec.n));
    }
    let stride = t_stride(spec.path_level, spec.t_depth)?;
    let level = spec.path_level as i32 + e;
    let dt = 2f64.powi(-(spec.t_depth as i32));
    let per_path: Vec<Vec<(f64, f64)>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|i| {
            let w = generate_path(spec.seed, path_stream(spec.stream, i), 1, level, spec.horizon)?;
            let counts = dyadic_counts(w.values(0), spec.path_level, spec.n, stride, &spec.cs, None)?;
            Ok(counts.iter().map(|c| sup_of(c, spec.n, dt)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(spec
        .cs
        .iter()
        .enumerate()
        .map(|(ci, &c)| OscillationReport::from_paths(c, spec.n, spec.t_depth, per_path.iter().map(|p| p[ci]).collect()))
        .collect())
}

/// Fraction of (path, t) samples where `N_n` computed on the depth-`n+2` path differs
/// from `N_n` on the same path refined to depth `n+4`.
pub fn refinement_disagreement(n_paths: usize, c: f64, n: u32, seed: u64) -> Result<f64> {
    let depth = n + 2;
    let (differ, total) = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let coarse = generate_path(seed, path_stream(0, i), 1, depth as i32, 1.0)?;
            let fine = crate::noise::refine_path(&coarse, 2);
            let a = dyadic_counts(coarse.values(0), depth, n, 1, &[c], None)?;
            let b = dyadic_counts(fine.values(0), depth + 2, n, 4, &[c], None)?;
            let differ = a[0].iter().zip(&b[0]).filter(|(x, y)| x != y).count();
            Ok((differ, a[0].len()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(differ as f64 / total as f64)
}

/// Inverse-flow probe configuration for [`flow_normalized_counts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCountSpec {
    pub lattice: Lattice,
    pub horizon: f64,
    pub n: u32,
    /// The inverse path is sampled at multiples of `2^−t_depth`.
    pub t_depth: u32,
    /// Target points `x`, flattened.
    pub probes: Vec<f64>,
    pub cs: Vec<f64>,
}

/// Normalized inverse-flow sup-ratios for one noise path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOscillation {
    pub c: f64,
    pub n: u32,
    /// Sup over `t` per probe; `None` for probes skipped after an inversion failure.
    pub probe_ratios: Vec<Option<f64>>,
    /// Sup over all probes and times.
    pub sup_ratio: f64,
    pub skipped: Vec<usize>,
}

/// Counts for `s ↦ ∇X_t(X_t⁻¹(x)) X_s⁻¹(x)`, the inverse-flow path normalized by the
/// inverse Jacobian at the counting time, with coordinate-max oscillation.
/// The flow is streamed on the noise grid, so no history is stored.
pub fn flow_normalized_counts(coeffs: &CoefficientSet, noise: &WienerPath, spec: &FlowCountSpec) -> Result<Vec<FlowOscillation>> {
    let d = spec.lattice.dim();
    let e = dyadic_exponent(spec.horizon)?;
    if spec.t_depth < spec.n {
        return param(format!("time grid depth {} does not resolve 2^-{}", spec.t_depth, spec.n));
    }
    if spec.probes.len() % d != 0 {
        return param("probe coordinates do not match the lattice dimension");
    }
    let noise_level = noise.level() as i32 - e;
    let t_level = spec.t_depth as i32;
    if noise_level < t_level || (noise.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return param("noise path must span the horizon at least as finely as the time grid");
    }
    let flow_spec = FlowSpec::new(spec.lattice.clone(), 0.0, spec.horizon).with_record_stride(1 << (noise_level - t_level));
    let n_probes = spec.probes.len() / d;
    // per probe: inverse path and normalization matrix at each sampled time
    let mut paths: Vec<Vec<f64>> = vec![Vec::new(); n_probes];
    let mut norms: Vec<Vec<f64>> = vec![Vec::new(); n_probes];
    let mut alive = vec![true; n_probes];
    let tol = 1e-10 * spec.lattice.diameter();
    let (mut x, mut j) = (vec![0.0; d], vec![0.0; d * d]);
    stream_forward(coeffs, noise, &flow_spec, |view| {
        for p in 0..n_probes {
            if !alive[p] {
                continue;
            }
            match view.invert(&spec.probes[p * d..(p + 1) * d], tol) {
                Ok(y) => {
                    view.eval(&y, &mut x, &mut j);
                    paths[p].extend_from_slice(&y);
                    norms[p].extend_from_slice(&j);
                }
                Err(_) => alive[p] = false,
            }
        }
        Ok(())
    })?;
    let samples = (1usize << (t_level + e)) + 1;
    let mut out: Vec<FlowOscillation> = spec
        .cs
        .iter()
        .map(|&c| FlowOscillation { c, n: spec.n, probe_ratios: vec![None; n_probes], sup_ratio: 0.0, skipped: Vec::new() })
        .collect();
    for p in 0..n_probes {
        if !alive[p] || paths[p].len() != samples * d {
            for o in out.iter_mut() {
                o.skipped.push(p);
            }
            continue;
        }
        let counts = if d == 1 {
            let scale: Vec<f64> = norms[p].iter().map(|v| v.abs()).collect();
            dyadic_counts(&paths[p], spec.t_depth, spec.n, 1, &spec.cs, Some(&scale))?
        } else {
            matrix_counts(&paths[p], &norms[p], d, t_level as u32, spec.n, &spec.cs)
        };
        for (o, cnt) in out.iter_mut().zip(&counts) {
            let r = sup_of(cnt, spec.n, 0.0).0;
            o.probe_ratios[p] = Some(r);
            o.sup_ratio = o.sup_ratio.max(r);
        }
    }
    Ok(out)
}

/// `σ(x) = sin x` on the line, the loading used for the inverse-flow count checks.
pub fn sine_loading() -> CoefficientSet {
    CoefficientSet::new(1, 1)
        .with_sigma(|_, x, out| out[0] = x[0].sin())
        .with_sigma_jacobian(|_, x, out| out[0] = x[0].cos())
        .with_label("sine-loading")
}

/// Inverse-flow counts for [`sine_loading`] over `n_paths` unit-horizon noise paths of depth
/// `n + 2`, probes `{−1, 0, 0.5, 1.5}` on the lattice `[−4, 4]` with 160 cells.
pub fn sine_flow_ensemble(n_paths: usize, cs: &[f64], n: u32, seed: u64) -> Result<Vec<Vec<FlowOscillation>>> {
    let spec = FlowCountSpec { lattice: Lattice::line(-4.0, 4.0, 160), horizon: 1.0, n, t_depth: n + 2, probes: vec![-1.0, 0.0, 0.5, 1.5], cs: cs.to_vec() };
    let coeffs = sine_loading();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| flow_normalized_counts(&coeffs, &generate_path(seed, i, 1, n as i32 + 2, 1.0)?, &spec))
        .collect()
}

/// Direct counts for a vector path normalized by a time-dependent matrix; quadratic
/// in the number of samples.
fn matrix_counts(path: &[f64], norms: &[f64], d: usize, level: u32, n: u32, cs: &[f64]) -> Vec<Vec<u16>> {
    let samples = path.len() / d;
    let mut counts = vec![vec![0u16; samples]; cs.len()];
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for t in 0..samples {
        let m = &norms[t * d * d..(t + 1) * d * d];
        for k in 0..=n {
            let w = 1usize << (level - k);
            lo.fill(f64::INFINITY);
            hi.fill(f64::NEG_INFINITY);
            for s in t.saturating_sub(w)..=t {
                let y = &path[s * d..(s + 1) * d];
                for i in 0..d {
                    let v: f64 = (0..d).map(|l| m[i * d + l] * y[l]).sum();
                    lo[i] = lo[i].min(v);
                    hi[i] = hi[i].max(v);
                }
            }
            let osc = (0..d).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
            let bound = 2f64.powf(-(k as f64) / 2.0);
            for (ci, c) in cs.iter().enumerate() {
                if osc > c * bound {
                    counts[ci][t] += 1;
                }
            }
        }
    }
    counts
}
