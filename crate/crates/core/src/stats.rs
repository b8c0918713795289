//! Small statistics helpers shared by the Monte Carlo modules.

use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// Mean and SE in fixed (index) order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, se, n }
    }

    pub fn within(&self, target: f64, n_se: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.se + slack
    }
}

/// Sample variance (unbiased).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Ordinary least squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LineFit { slope, intercept: my - slope * mx, r2, n })
}

/// Linear-interpolated quantile, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    v[lo] * (1.0 - w) + v[hi] * w
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Percentile bootstrap interval for `median(b) - median(a)`.
pub fn bootstrap_median_difference(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = rng::substream(seed, 0, tag::BOOTSTRAP, 0);
    let mut diffs = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..resamples {
        for v in ra.iter_mut() {
            *v = a[rng::index_below(&mut rng, a.len())];
        }
        for v in rb.iter_mut() {
            *v = b[rng::index_below(&mut rng, b.len())];
        }
        diffs.push(median(&rb) - median(&ra));
    }
    let tail = (1.0 - level) / 2.0;
    (quantile(&diffs, tail), quantile(&diffs, 1.0 - tail))
}

/// Percentile bootstrap interval for `median(b) - median(a)` when `a[i]` and `b[i]` come
/// from the same replica; indices are resampled jointly.
pub fn bootstrap_paired_median_difference(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let mut rng = rng::substream(seed, 2, tag::BOOTSTRAP, 0);
    let mut diffs = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..resamples {
        for (va, vb) in ra.iter_mut().zip(rb.iter_mut()) {
            let i = rng::index_below(&mut rng, a.len());
            (*va, *vb) = (a[i], b[i]);
        }
        diffs.push(median(&rb) - median(&ra));
    }
    let tail = (1.0 - level) / 2.0;
    (quantile(&diffs, tail), quantile(&diffs, 1.0 - tail))
}

/// Percentile bootstrap interval for the median of one sample.
pub fn bootstrap_median(a: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = rng::substream(seed, 1, tag::BOOTSTRAP, 0);
    let mut meds = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    for _ in 0..resamples {
        for v in ra.iter_mut() {
            *v = a[rng::index_below(&mut rng, a.len())];
        }
        meds.push(median(&ra));
    }
    let tail = (1.0 - level) / 2.0;
    (quantile(&meds, tail), quantile(&meds, 1.0 - tail))
}
