//! Multi-component Wiener paths on dyadic grids.
//!
//! Paths are built by the Lévy midpoint construction. The Gaussian used for
//! the midpoint at `(component, level, index)` is a fixed function of
//! `(master_seed, stream_id, component, level, index)`, so refining a path
//! and generating it directly at the finer level give bit-identical values.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{param, LabError, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    horizon: f64,
    level: u32,
    master_seed: u64,
    stream_id: u64,
    /// `values[k][i]` is `W^k` at time `i * horizon / 2^level`.
    values: Vec<Vec<f64>>,
}

fn sub_key(component: usize, level: u32) -> u64 {
    ((component as u64) << 32) | level as u64
}

/// Inserts one level of conditional midpoints into `vals`, which holds a
/// path on a grid of `2^(level-1)` intervals.
fn bisect(vals: &[f64], horizon: f64, seed: u64, stream: u64, component: usize, level: u32) -> Vec<f64> {
    let intervals = vals.len() - 1;
    let parent_len = horizon / intervals as f64;
    let sd = (parent_len / 4.0).sqrt();
    let mut rng = rng::substream(seed, stream, tag::WIENER, sub_key(component, level));
    let mut out = Vec::with_capacity(2 * intervals + 1);
    for j in 0..intervals {
        let z = rng::normal(&mut rng);
        out.push(vals[j]);
        out.push(0.5 * (vals[j] + vals[j + 1]) + sd * z);
    }
    out.push(vals[intervals]);
    out
}

/// Generates `components` independent Wiener paths on `[0, horizon]` at dyadic depth `level`.
pub fn generate_path(seed: u64, stream: u64, components: usize, level: i32, horizon: f64) -> Result<WienerPath> {
    if level < 0 {
        return param(format!("dyadic level must be >= 0, got {level}"));
    }
    if components == 0 {
        return param("need at least one noise component");
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return param(format!("horizon must be positive, got {horizon}"));
    }
    let values = (0..components)
        .map(|k| {
            let mut rng = rng::substream(seed, stream, tag::WIENER, sub_key(k, 0));
            let mut vals = vec![0.0, horizon.sqrt() * rng::normal(&mut rng)];
            for l in 1..=level as u32 {
                vals = bisect(&vals, horizon, seed, stream, k, l);
            }
            vals
        })
        .collect();
    Ok(WienerPath { horizon, level: level as u32, master_seed: seed, stream_id: stream, values })
}

/// Adds `extra_levels` of Brownian-bridge midpoints; existing values are kept bit-exactly.
pub fn refine_path(path: &WienerPath, extra_levels: u32) -> WienerPath {
    let mut out = path.clone();
    for l in path.level + 1..=path.level + extra_levels {
        for k in 0..out.values.len() {
            out.values[k] = bisect(&out.values[k], path.horizon, path.master_seed, path.stream_id, k, l);
        }
    }
    out.level = path.level + extra_levels;
    out
}

impl WienerPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn components(&self) -> usize {
        self.values.len()
    }
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
    /// Number of grid intervals, `2^level`.
    pub fn intervals(&self) -> usize {
        1usize << self.level
    }
    pub fn step(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }
    pub fn values(&self, component: usize) -> &[f64] {
        &self.values[component]
    }
    pub fn at_index(&self, component: usize, index: usize) -> f64 {
        self.values[component][index]
    }

    /// `W^k_t` with `W_t = W_0` for `t < 0` and linear interpolation between grid points.
    pub fn value(&self, component: usize, t: f64) -> f64 {
        let vals = &self.values[component];
        if t <= 0.0 {
            return vals[0];
        }
        let pos = t / self.step();
        let i = pos.floor() as usize;
        if i >= vals.len() - 1 {
            return vals[vals.len() - 1];
        }
        let w = pos - i as f64;
        if w == 0.0 {
            vals[i]
        } else {
            vals[i] * (1.0 - w) + vals[i + 1] * w
        }
    }

    /// `W_{i1} - W_{i0}` for every component, written into `out`.
    pub fn increment(&self, i0: usize, i1: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.values[k][i1] - self.values[k][i0];
        }
    }

    /// One component as a scalar path starting at time 0.
    pub fn component(&self, component: usize) -> ScalarPath {
        ScalarPath { step: self.step(), values: self.values[component].clone() }
    }

    /// Little-endian dump: `T, L, d1, seed, stream` (8 bytes each) then the
    /// values component-major as IEEE-754 doubles.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&(self.level as u64).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        w.write_all(&self.master_seed.to_le_bytes())?;
        w.write_all(&self.stream_id.to_le_bytes())?;
        for comp in &self.values {
            for v in comp {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let level = u64::from_le_bytes(next(&mut r)?);
        let comps = u64::from_le_bytes(next(&mut r)?);
        let master_seed = u64::from_le_bytes(next(&mut r)?);
        let stream_id = u64::from_le_bytes(next(&mut r)?);
        if level > 40 || comps == 0 || comps > 1 << 16 {
            return Err(LabError::Validation(format!("implausible path header: level {level}, components {comps}")));
        }
        let n = (1usize << level) + 1;
        let mut values = Vec::with_capacity(comps as usize);
        for _ in 0..comps {
            let mut comp = Vec::with_capacity(n);
            for _ in 0..n {
                comp.push(f64::from_le_bytes(next(&mut r)?));
            }
            values.push(comp);
        }
        Ok(WienerPath { horizon, level: level as u32, master_seed, stream_id, values })
    }
}

/// A scalar path sampled on a uniform grid starting at time 0; by convention
/// the path is flat (`x_t = x_0`) for negative times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPath {
    pub step: f64,
    pub values: Vec<f64>,
}

impl ScalarPath {
    pub fn new(step: f64, values: Vec<f64>) -> Self {
        ScalarPath { step, values }
    }

    pub fn from_fn(step: f64, len: usize, f: impl Fn(f64) -> f64) -> Self {
        ScalarPath { step, values: (0..len).map(|i| f(i as f64 * step)).collect() }
    }

    pub fn end_time(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Grid index range `[lo, hi]` of points inside the closed interval `[s, t]`,
    /// after clamping negative times to 0.
    pub fn index_range(&self, s: f64, t: f64) -> Option<(usize, usize)> {
        let eps = 1e-9;
        let s = s.max(0.0);
        if t < s || t < 0.0 {
            return None;
        }
        let lo = ((s / self.step) - eps).ceil().max(0.0) as usize;
        let hi = (((t / self.step) + eps).floor() as usize).min(self.values.len() - 1);
        if lo > hi || lo >= self.values.len() {
            None
        } else {
            Some((lo, hi))
        }
    }
}

/// Max minus min of the path over grid points in the closed interval `[s, t]`.
pub fn oscillation(path: &ScalarPath, s: f64, t: f64) -> Result<f64> {
    let (lo, hi) = path.index_range(s, t).ok_or(LabError::EmptyInterval { lo: s, hi: t })?;
    let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &path.values[lo..=hi] {
        mn = mn.min(v);
        mx = mx.max(v);
    }
    Ok(mx - mn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    #[test]
    fn starts_at_zero() {
        for seed in 0..5 {
            let p = generate_path(seed, 9, 3, 4, 2.0).unwrap();
            for k in 0..3 {
                assert_eq!(p.values(k)[0], 0.0);
                assert_eq!(p.values(k).len(), 17);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_path(0, 0, 1, -1, 1.0).is_err());
        assert!(generate_path(0, 0, 1, 2, 0.0).is_err());
        assert!(generate_path(0, 0, 0, 2, 1.0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_path(17, 4, 2, 6, 1.0).unwrap();
        let b = generate_path(17, 4, 2, 6, 1.0).unwrap();
        for k in 0..2 {
            let ab: Vec<u64> = a.values(k).iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.values(k).iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn refinement_keeps_existing_values() {
        let p = generate_path(5, 1, 2, 2, 1.0).unwrap();
        assert_eq!(refine_path(&p, 0), p);
        let r = refine_path(&p, 1);
        for k in 0..2 {
            for i in 0..5 {
                assert_eq!(r.values(k)[2 * i].to_bits(), p.values(k)[i].to_bits());
            }
        }
        // refining equals generating directly at the finer level
        assert_eq!(refine_path(&p, 3), generate_path(5, 1, 2, 5, 1.0).unwrap());
    }

    #[test]
    fn terminal_variance_matches_horizon() {
        let n = 10_000;
        let w1: Vec<f64> = (0..n).map(|s| *generate_path(s, 0, 1, 8, 1.0).unwrap().values(0).last().unwrap()).collect();
        let var = stats::variance(&w1);
        // SE of a sample variance of Gaussians: sigma^2 sqrt(2/(n-1))
        let se = (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn midpoint_residual_variance_is_quarter_interval() {
        let n = 10_000;
        let level = 3;
        let delta = 1.0 / 8.0;
        let resid: Vec<f64> = (0..n)
            .map(|s| {
                let p = generate_path(s, 2, 1, level, 1.0).unwrap();
                let r = refine_path(&p, 1);
                let v = r.values(0);
                v[5] - 0.5 * (v[4] + v[6])
            })
            .collect();
        let var = stats::variance(&resid);
        let target = delta / 4.0;
        let se = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} vs {target}");
    }

    #[test]
    fn disjoint_increments_uncorrelated() {
        let n = 10_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|s| {
                let p = generate_path(s, 3, 1, 4, 1.0).unwrap();
                let v = p.values(0);
                (v[4] - v[0], v[12] - v[8])
            })
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        let corr = cov / (stats::variance(&xs) * stats::variance(&ys)).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn oscillation_examples() {
        let flat = ScalarPath::from_fn(1.0 / 64.0, 65, |_| 2.5);
        assert_eq!(oscillation(&flat, 0.0, 1.0).unwrap(), 0.0);
        let id = ScalarPath::from_fn(1.0 / 64.0, 65, |t| t);
        for k in 0..6 {
            let w = 2f64.powi(-k);
            assert!((oscillation(&id, 0.0, w).unwrap() - w).abs() < 1e-15);
        }
        // flat before 0
        assert_eq!(oscillation(&id, -0.5, 0.0).unwrap(), 0.0);
        assert!(oscillation(&id, 2.0, 3.0).is_err());
    }

    #[test]
    fn oscillation_matches_brute_force() {
        let p = generate_path(8, 0, 1, 9, 1.0).unwrap().component(0);
        for (s, t) in [(0.0, 1.0), (0.25, 0.5), (0.1, 0.37), (-0.3, 0.2)] {
            let mut mx = f64::NEG_INFINITY;
            let mut mn = f64::INFINITY;
            for (i, v) in p.values.iter().enumerate() {
                let ti = i as f64 * p.step;
                if ti >= s - 1e-12 && ti <= t + 1e-12 {
                    mx = mx.max(*v);
                    mn = mn.min(*v);
                }
            }
            assert_eq!(oscillation(&p, s, t).unwrap(), mx - mn);
        }
    }

    #[test]
    fn binary_dump_round_trips() {
        let p = generate_path(3, 4, 2, 5, 0.5).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 2 * 33 * 8);
        assert_eq!(&buf[..8], &0.5f64.to_le_bytes());
        assert_eq!(WienerPath::read_binary(&buf[..]).unwrap(), p);
    }

    proptest! {
        #[test]
        fn oscillation_monotone_in_interval(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0, shrink in 0.0f64..1.0) {
            let p = generate_path(seed, 0, 1, 7, 1.0).unwrap().component(0);
            let (s, t) = if a < b { (a, b) } else { (b, a) };
            let s_in = s + shrink * (t - s) * 0.5;
            let t_in = t - shrink * (t - s) * 0.5;
            if let (Ok(inner), Ok(outer)) = (oscillation(&p, s_in, t_in), oscillation(&p, s, t)) {
                prop_assert!(inner <= outer);
            }
        }

        #[test]
        fn refinement_never_decreases_oscillation(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = generate_path(seed, 0, 1, 6, 1.0).unwrap();
            let r = refine_path(&p, 2);
            let (s, t) = if a < b { (a, b) } else { (b, a) };
            if let Ok(coarse) = oscillation(&p.component(0), s, t) {
                prop_assert!(oscillation(&r.component(0), s, t).unwrap() >= coarse);
            }
        }
    }
}
