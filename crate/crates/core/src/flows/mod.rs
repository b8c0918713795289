//! Stochastic flows `dX_t = −σ^k_t(X_t) dW^k_t` on a lattice of starting
//! points, with Jacobians, inversion, the coefficients of the equation
//! transformed along the flow, and backward characteristics.

mod consistency;
mod lattice;
mod residual;
mod transform;


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use consistency::{transformation_consistency, ConsistencyConfig, ConsistencySample};
pub use lattice::Lattice;
pub use residual::{chaining_term, composition_residual, increment_residual, residual_increment_exponent, IncrementFit, IncrementSample};
pub use transform::{
    backward_flow, solve_transformed, AllSpace, BackwardConfig, Characteristic, CharacteristicField, FlowRegion, Region, StaticField,
    TransformedCoefficients, TransformedPoint, TransformedSolution,
};

use crate::error::{param, LabError, Result};
use crate::noise::WienerPath;
use crate::solver::CoefficientSet;

/// Time window and resolution of a forward flow integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub lattice: Lattice,
    pub start: f64,
    pub end: f64,
    /// Noise-grid intervals per Euler step.
    pub noise_stride: usize,
    /// Euler steps between recorded snapshots; the final time is always recorded.
    pub record_stride: usize,
}

impl FlowSpec {
    pub fn new(lattice: Lattice, start: f64, end: f64) -> Self {
        FlowSpec { lattice, start, end, noise_stride: 1, record_stride: 1 }
    }
    pub fn with_noise_stride(mut self, s: usize) -> Self {
        self.noise_stride = s.max(1);
        self
    }
    pub fn with_record_stride(mut self, s: usize) -> Self {
        self.record_stride = s.max(1);
        self
    }
}

/// Positions and Jacobians of the flow at one time, row-major per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    /// `x[p * d + i] = X^i` at lattice point `p`.
    pub x: Vec<f64>,
    /// `jac[(p * d + i) * d + j] = D_j X^i`.
    pub jac: Vec<f64>,
}

/// Recorded forward flow `X_{start,t}` over a lattice.
#[derive(Debug, Clone)]
pub struct FlowField {
    lattice: Lattice,
    start: f64,
    dt: f64,
    snapshots: Vec<Snapshot>,
    seed: u64,
    stream: u64,
}

/// Borrowed view of one snapshot together with its lattice.
#[derive(Debug, Clone, Copy)]
pub struct FlowView<'a> {
    lattice: &'a Lattice,
    snap: &'a Snapshot,
}

pub(crate) fn det(d: usize, m: &[f64]) -> f64 {
    match d {
        1 => m[0],
        _ => m[0] * m[3] - m[1] * m[2],
    }
}

pub(crate) fn inverse(d: usize, m: &[f64]) -> Option<Vec<f64>> {
    let det = det(d, m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(match d {
        1 => vec![1.0 / m[0]],
        _ => vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det],
    })
}

fn check_dim(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        param(format!("flows support dimension 1 or 2, got {d}"))
    }
}

struct StepPlan {
    first_index: usize,
    steps: usize,
    dt: f64,
    stride: usize,
}

fn plan(noise: &WienerPath, spec: &FlowSpec) -> Result<StepPlan> {
    let step = noise.step();
    let stride = spec.noise_stride;
    let dt = step * stride as f64;
    let first = spec.start / step;
    let first_index = first.round() as usize;
    if spec.start < 0.0 || (first - first_index as f64).abs() > 1e-9 {
        return param(format!("flow start {} is not on the noise grid", spec.start));
    }
    let span = (spec.end - spec.start) / dt;
    let steps = span.round() as usize;
    if spec.end < spec.start || (span - steps as f64).abs() > 1e-9 {
        return param(format!("flow window [{}, {}] is not a multiple of dt = {dt:e}", spec.start, spec.end));
    }
    if first_index + steps * stride > noise.intervals() {
        return param(format!("flow end {} exceeds the noise horizon {}", spec.end, noise.horizon()));
    }
    Ok(StepPlan { first_index, steps, dt, stride })
}

/// One Euler step for a single point: `X ← X − σ(X) ΔW`, `J ← (I − ∇σ^k(X) ΔW^k) J`.
fn advance_point(coeffs: &CoefficientSet, t: f64, dw: &[f64], x: &mut [f64], jac: &mut [f64], sig: &mut [f64], dsig: &mut [f64]) {
    let d = x.len();
    let d1 = dw.len();
    coeffs.eval_sigma(t, x, sig);
    coeffs.eval_sigma_jacobian(t, x, dsig);
    let mut m = [0.0; 4];
    for i in 0..d {
        for j in 0..d {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..d1 {
                s -= dsig[(k * d + i) * d + j] * dw[k];
            }
            m[i * d + j] = s;
        }
    }
    let mut nj = [0.0; 4];
    for i in 0..d {
        for j in 0..d {
            nj[i * d + j] = (0..d).map(|l| m[i * d + l] * jac[l * d + j]).sum();
        }
    }
    jac.copy_from_slice(&nj[..d * d]);
    for i in 0..d {
        for k in 0..d1 {
            x[i] -= sig[i * d1 + k] * dw[k];
        }
    }
}

/// Integrates the flow step by step and hands every recorded snapshot to `visit`
/// without storing the history.
pub fn stream_forward(
    coeffs: &CoefficientSet,
    noise: &WienerPath,
    spec: &FlowSpec,
    mut visit: impl FnMut(FlowView<'_>) -> Result<()>,
) -> Result<()> {
    let d = spec.lattice.dim();
    check_dim(d)?;
    if coeffs.dim() != d {
        return param(format!("coefficients have dimension {}, lattice has {d}", coeffs.dim()));
    }
    if coeffs.noise_dim() != noise.components() {
        return param(format!("coefficients expect {} noise components, path has {}", coeffs.noise_dim(), noise.components()));
    }
    let plan = plan(noise, spec)?;
    let n = spec.lattice.len();
    let mut snap = Snapshot { time: spec.start, x: spec.lattice.coordinates(), jac: vec![0.0; n * d * d] };
    for p in 0..n {
        for i in 0..d {
            snap.jac[(p * d + i) * d + i] = 1.0;
        }
    }
    visit(FlowView { lattice: &spec.lattice, snap: &snap })?;
    let d1 = noise.components();
    let mut dw = vec![0.0; d1];
    for s in 0..plan.steps {
        let i0 = plan.first_index + s * plan.stride;
        let t = spec.start + s as f64 * plan.dt;
        noise.increment(i0, i0 + plan.stride, &mut dw);
        let dw = &dw;
        snap.x.par_chunks_mut(d).zip(snap.jac.par_chunks_mut(d * d)).with_min_len(256).for_each_init(
            || (vec![0.0; d * d1], vec![0.0; d * d * d1]),
            |(sig, dsig), (x, j)| advance_point(coeffs, t, dw, x, j, sig, dsig),
        );
        snap.time = spec.start + (s + 1) as f64 * plan.dt;
        for (p, j) in snap.jac.chunks(d * d).enumerate() {
            let dj = det(d, j);
            if !(dj > 0.0) {
                return Err(LabError::FlowDegeneracy { t: snap.time, x: spec.lattice.point(p), det: dj });
            }
        }
        if (s + 1) % spec.record_stride == 0 || s + 1 == plan.steps {
            visit(FlowView { lattice: &spec.lattice, snap: &snap })?;
        }
    }
    Ok(())
}

/// Euler–Maruyama integration of the flow from every lattice point, sharing one noise path.
pub fn integrate_forward(coeffs: &CoefficientSet, noise: &WienerPath, spec: &FlowSpec) -> Result<FlowField> {
    let mut snapshots = Vec::new();
    stream_forward(coeffs, noise, spec, |v| {
        snapshots.push(v.snap.clone());
        Ok(())
    })?;
    Ok(FlowField {
        lattice: spec.lattice.clone(),
        start: spec.start,
        dt: noise.step() * spec.noise_stride as f64,
        snapshots,
        seed: noise.master_seed(),
        stream: noise.stream_id(),
    })
}

/// `y` with `|X_t(y) − target| ≤ 10⁻¹⁰·diam` for a recorded time `t`.
pub fn invert_point(flow: &FlowField, t: f64, target: &[f64]) -> Result<Vec<f64>> {
    let idx = flow.index_at(t).ok_or_else(|| LabError::Parameter(format!("time {t} is not recorded in the flow")))?;
    flow.view(idx).invert(target, flow.default_tolerance())
}

impl FlowField {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }
    pub fn start(&self) -> f64 {
        self.start
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream(&self) -> u64 {
        self.stream
    }
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
    pub fn snapshot(&self, idx: usize) -> &Snapshot {
        &self.snapshots[idx]
    }
    pub fn view(&self, idx: usize) -> FlowView<'_> {
        FlowView { lattice: &self.lattice, snap: &self.snapshots[idx] }
    }
    pub fn last(&self) -> FlowView<'_> {
        self.view(self.snapshots.len() - 1)
    }
    pub fn default_tolerance(&self) -> f64 {
        1e-10 * self.lattice.diameter()
    }

    /// Index of the recorded time equal to `t` up to rounding.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let idx = self.nearest_index(t);
        let tol = 1e-9 * self.dt.max(f64::MIN_POSITIVE);
        ((self.snapshots[idx].time - t).abs() <= tol).then_some(idx)
    }

    /// Index of the recorded time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let pos = self.snapshots.partition_point(|s| s.time < t);
        if pos == 0 {
            0
        } else if pos == self.snapshots.len() {
            pos - 1
        } else if (self.snapshots[pos].time - t).abs() < (t - self.snapshots[pos - 1].time).abs() {
            pos
        } else {
            pos - 1
        }
    }

    /// CSV rows `t, x0[, y0], X[, Y], J entries` for every snapshot.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let head = match d {
            1 => "t,x0,X,J11",
            _ => "t,x0,y0,X,Y,J11,J12,J21,J22",
        };
        writeln!(w, "{head}")?;
        for s in &self.snapshots {
            for p in 0..self.lattice.len() {
                let mut row = vec![s.time];
                row.extend(self.lattice.point(p));
                row.extend_from_slice(&s.x[p * d..(p + 1) * d]);
                row.extend_from_slice(&s.jac[p * d * d..(p + 1) * d * d]);
                let text: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", text.join(","))?;
            }
        }
        Ok(())
    }
}

impl<'a> FlowView<'a> {
    pub fn time(&self) -> f64 {
        self.snap.time
    }
    pub fn lattice(&self) -> &'a Lattice {
        self.lattice
    }
    pub fn snapshot(&self) -> &'a Snapshot {
        self.snap
    }

    /// Interpolated `X(y)` and Jacobian `∇X(y)`. In one dimension this is the
    /// cubic Hermite interpolant and its derivative; in two dimensions both
    /// positions and Jacobians are interpolated bilinearly.
    pub fn eval(&self, y: &[f64], x_out: &mut [f64], jac_out: &mut [f64]) {
        let (cell, loc) = self.lattice.locate(y);
        let (xs, js) = (&self.snap.x, &self.snap.jac);
        match self.lattice.dim() {
            1 => {
                let h = self.lattice.steps()[0];
                let (i, s) = (cell[0], loc[0]);
                let (s2, s3) = (s * s, s * s * s);
                let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
                let (d00, d10, d01, d11) = (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s);
                x_out[0] = h00 * xs[i] + h10 * h * js[i] + h01 * xs[i + 1] + h11 * h * js[i + 1];
                jac_out[0] = (d00 * xs[i] + d01 * xs[i + 1]) / h + d10 * js[i] + d11 * js[i + 1];
            }
            _ => {
                let w = bilinear_weights(loc);
                let nodes = self.cell_nodes(cell);
                x_out[..2].fill(0.0);
                jac_out[..4].fill(0.0);
                for (n, wn) in nodes.iter().zip(w) {
                    for a in 0..2 {
                        x_out[a] += wn * xs[n * 2 + a];
                    }
                    for a in 0..4 {
                        jac_out[a] += wn * js[n * 4 + a];
                    }
                }
            }
        }
    }

    pub fn position(&self, y: &[f64]) -> Vec<f64> {
        let d = self.lattice.dim();
        let mut x = vec![0.0; d];
        let mut j = vec![0.0; d * d];
        self.eval(y, &mut x, &mut j);
        x
    }

    fn cell_nodes(&self, cell: [usize; 2]) -> [usize; 4] {
        let l = self.lattice;
        [
            l.flat(&[cell[0], cell[1]]),
            l.flat(&[cell[0] + 1, cell[1]]),
            l.flat(&[cell[0], cell[1] + 1]),
            l.flat(&[cell[0] + 1, cell[1] + 1]),
        ]
    }

    /// Second derivatives `D_l D_j X^i` at a lattice node by differences of the Jacobian,
    /// laid out as `[(i * d + j) * d + l]`.
    pub fn node_hessian(&self, node: usize) -> Vec<f64> {
        let d = self.lattice.dim();
        let mut out = [0.0; 8];
        self.node_hessian_into(node, &mut out);
        out[..d * d * d].to_vec()
    }

    fn node_hessian_into(&self, node: usize, out: &mut [f64; 8]) {
        let l = self.lattice;
        let d = l.dim();
        let m = l.multi(node);
        for axis in 0..d {
            let n = l.counts()[axis];
            let (lo, hi) = (m[axis].saturating_sub(1), (m[axis] + 1).min(n - 1));
            let mut a = m;
            a[axis] = lo;
            let mut b = m;
            b[axis] = hi;
            let (pa, pb) = (l.flat(&a[..d]), l.flat(&b[..d]));
            let span = (hi - lo) as f64 * l.steps()[axis];
            for i in 0..d {
                for j in 0..d {
                    out[(i * d + j) * d + axis] = (self.snap.jac[(pb * d + i) * d + j] - self.snap.jac[(pa * d + i) * d + j]) / span;
                }
            }
        }
        // the mixed derivatives must be symmetric in (j, l)
        if d == 2 {
            for i in 0..d {
                let avg = 0.5 * (out[(i * d) * d + 1] + out[(i * d + 1) * d]);
                out[(i * d) * d + 1] = avg;
                out[(i * d + 1) * d] = avg;
            }
        }
    }

    /// `∇²X` at an arbitrary point, linearly interpolated from the node values.
    pub fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let d = self.lattice.dim();
        let mut out = [0.0; 8];
        self.hessian_into(y, &mut out);
        out[..d * d * d].to_vec()
    }

    pub(crate) fn hessian_into(&self, y: &[f64], out: &mut [f64; 8]) {
        let (cell, loc) = self.lattice.locate(y);
        let mut node = [0.0; 8];
        out.fill(0.0);
        match self.lattice.dim() {
            1 => {
                for (n, w) in [(cell[0], 1.0 - loc[0]), (cell[0] + 1, loc[0])] {
                    self.node_hessian_into(n, &mut node);
                    out[0] += w * node[0];
                }
            }
            _ => {
                for (n, w) in self.cell_nodes(cell).iter().zip(bilinear_weights(loc)) {
                    self.node_hessian_into(*n, &mut node);
                    for (o, v) in out.iter_mut().zip(node) {
                        *o += w * v;
                    }
                }
            }
        }
    }

    /// Newton iteration for `X(y) = target`.
    pub fn invert(&self, target: &[f64], tol: f64) -> Result<Vec<f64>> {
        let d = self.lattice.dim();
        let mut x = vec![0.0; d];
        let mut j = vec![0.0; d * d];
        let fail = |res: f64| LabError::Inversion { t: self.snap.time, target: target.to_vec(), residual: res };
        if d == 1 {
            return self.invert_line(target[0], tol).map(|y| vec![y]).map_err(fail);
        }
        // start from the node whose image is closest to the target
        let mut y = self.lattice.point(
            (0..self.lattice.len())
                .min_by(|&a, &b| {
                    let da = (self.snap.x[2 * a] - target[0]).hypot(self.snap.x[2 * a + 1] - target[1]);
                    let db = (self.snap.x[2 * b] - target[0]).hypot(self.snap.x[2 * b + 1] - target[1]);
                    da.total_cmp(&db)
                })
                .unwrap_or(0),
        );
        let mut res = f64::INFINITY;
        for _ in 0..200 {
            self.eval(&y, &mut x, &mut j);
            let r = [x[0] - target[0], x[1] - target[1]];
            res = r[0].hypot(r[1]);
            if res <= tol {
                return Ok(y);
            }
            let inv = inverse(2, &j).ok_or_else(|| fail(res))?;
            y[0] -= inv[0] * r[0] + inv[1] * r[1];
            y[1] -= inv[2] * r[0] + inv[3] * r[1];
        }
        Err(fail(res))
    }

    /// Safeguarded Newton on the monotone Hermite interpolant.
    fn invert_line(&self, target: f64, tol: f64) -> std::result::Result<f64, f64> {
        let l = self.lattice;
        let xs = &self.snap.x;
        let n = xs.len();
        let i = xs.partition_point(|v| *v < target).clamp(1, n - 1) - 1;
        let h = l.steps()[0];
        let (mut lo, mut hi) = (l.point(i)[0], l.point(i + 1)[0]);
        let bracketed = xs[i] <= target && target <= xs[i + 1];
        let mut y = lo + h * ((target - xs[i]) / (xs[i + 1] - xs[i])).clamp(-1.0, 2.0);
        let (mut x, mut j) = ([0.0], [0.0]);
        let mut res = f64::INFINITY;
        for _ in 0..200 {
            self.eval(&[y], &mut x, &mut j);
            let r = x[0] - target;
            res = r.abs();
            if res <= tol {
                return Ok(y);
            }
            if bracketed {
                if r > 0.0 {
                    hi = y;
                } else {
                    lo = y;
                }
            }
            let mut next = y - r / j[0];
            if bracketed && !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if !next.is_finite() {
                return Err(res);
            }
            y = next;
        }
        Err(res)
    }
}

fn bilinear_weights(loc: [f64; 2]) -> [f64; 4] {
    let (s, t) = (loc[0], loc[1]);
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}
