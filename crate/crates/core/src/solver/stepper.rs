//! Drift-implicit, noise-explicit Euler–Maruyama steps on the lattice.

use crate::domain::Domain;
use crate::error::{LabError, Result};
use crate::linalg::{self, Csr};

use super::coefficients::CoefficientSet;
use super::grid::Grid;

pub(crate) enum Stepper<'a> {
    Line(LineStepper<'a>),
    Disk(DiskStepper<'a>),
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(coeffs: &'a CoefficientSet, domain: &Domain, grid: &Grid) -> Result<Self> {
        if coeffs.dim() != domain.dim() {
            return Err(LabError::Parameter(format!(
                "coefficient dimension {} does not match domain dimension {}",
                coeffs.dim(),
                domain.dim()
            )));
        }
        Ok(match grid {
            Grid::Line { .. } => Stepper::Line(LineStepper::new(coeffs, grid)),
            Grid::Square { .. } => Stepper::Disk(DiskStepper::new(coeffs, domain, grid)),
        })
    }

    /// Advances `u` (all lattice nodes) from `t` to `t + dt` with noise increments `dw`.
    pub(crate) fn step(&mut self, u: &mut [f64], t: f64, dt: f64, dw: &[f64]) -> Result<()> {
        match self {
            Stepper::Line(s) => s.step(u, t, dt, dw),
            Stepper::Disk(s) => s.step(u, t, dt, dw),
        }
    }
}

pub(crate) struct LineStepper<'a> {
    coeffs: &'a CoefficientSet,
    x: Vec<f64>,
    h: f64,
    a: Vec<f64>,
    sigma: Vec<f64>,
    cached: bool,
    // Thomas factorisation of the implicit matrix for the cached `a` and `dt`.
    factor_dt: f64,
    inv_pivot: Vec<f64>,
    cprime: Vec<f64>,
    rhs: Vec<f64>,
    grad: Vec<f64>,
    gbuf: Vec<f64>,
}

impl<'a> LineStepper<'a> {
    fn new(coeffs: &'a CoefficientSet, grid: &Grid) -> Self {
        let n = grid.len();
        let d1 = coeffs.noise_dim();
        let x: Vec<f64> = (0..n).map(|i| grid.position(i)[0]).collect();
        let mut s = LineStepper {
            coeffs,
            x,
            h: grid.h(),
            a: vec![0.0; n],
            sigma: vec![0.0; n * d1],
            cached: false,
            factor_dt: f64::NAN,
            inv_pivot: vec![0.0; n],
            cprime: vec![0.0; n],
            rhs: vec![0.0; n],
            grad: vec![0.0; n],
            gbuf: vec![0.0; d1],
        };
        if !coeffs.is_time_dependent() {
            s.load(0.0);
            s.cached = true;
        }
        s
    }

    fn load(&mut self, t: f64) {
        let d1 = self.coeffs.noise_dim();
        let mut a = [0.0];
        for i in 0..self.x.len() {
            self.coeffs.eval_a(t, &self.x[i..i + 1], &mut a);
            self.a[i] = a[0];
            self.coeffs.eval_sigma(t, &self.x[i..i + 1], &mut self.sigma[i * d1..(i + 1) * d1]);
        }
    }

    fn factor(&mut self, t: f64, dt: f64) -> Result<()> {
        let n = self.x.len();
        let r = dt / (self.h * self.h);
        // unknowns are nodes 1..n-1; boundary nodes are pinned to zero
        for i in 1..n - 1 {
            let lower = if i > 1 { -r * self.a[i] } else { 0.0 };
            let diag = 1.0 + 2.0 * r * self.a[i];
            let upper = if i + 2 < n { -r * self.a[i] } else { 0.0 };
            let pivot = diag - lower * if i > 1 { self.cprime[i - 1] } else { 0.0 };
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(LabError::Numerical { t, reason: format!("vanishing pivot at node {i}") });
            }
            self.inv_pivot[i] = 1.0 / pivot;
            self.cprime[i] = upper / pivot;
        }
        self.factor_dt = dt;
        Ok(())
    }

    fn step(&mut self, u: &mut [f64], t: f64, dt: f64, dw: &[f64]) -> Result<()> {
        let n = u.len();
        let d1 = self.coeffs.noise_dim();
        if n < 3 {
            u.fill(0.0);
            return Ok(());
        }
        if !self.cached {
            self.load(t);
            self.factor(t, dt)?;
        } else if self.factor_dt != dt {
            self.factor(t, dt)?;
        }
        let inv2h = 0.5 / self.h;
        u[0] = 0.0;
        u[n - 1] = 0.0;
        for i in 1..n - 1 {
            self.grad[i] = (u[i + 1] - u[i - 1]) * inv2h;
        }
        let has_f = self.coeffs.has_drift();
        let has_g = self.coeffs.has_noise_term();
        for i in 1..n - 1 {
            let mut r = u[i];
            let gi = self.grad[i];
            if has_f {
                r += dt * self.coeffs.eval_f(t, &self.x[i..i + 1], u[i], &[gi]);
            }
            let sig = &self.sigma[i * d1..(i + 1) * d1];
            if has_g {
                self.coeffs.eval_g(t, &self.x[i..i + 1], u[i], &mut self.gbuf);
                for k in 0..d1 {
                    r += (sig[k] * gi + self.gbuf[k]) * dw[k];
                }
            } else {
                for k in 0..d1 {
                    r += sig[k] * gi * dw[k];
                }
            }
            self.rhs[i] = r;
        }
        // forward sweep with the stored factorisation
        let coef = dt / (self.h * self.h);
        let mut prev = 0.0;
        for i in 1..n - 1 {
            let lower = if i > 1 { -coef * self.a[i] } else { 0.0 };
            prev = (self.rhs[i] - lower * prev) * self.inv_pivot[i];
            self.rhs[i] = prev;
        }
        let mut next = 0.0;
        for i in (1..n - 1).rev() {
            next = self.rhs[i] - self.cprime[i] * next;
            u[i] = next;
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(LabError::Numerical { t, reason: "non-finite state after implicit solve".into() });
        }
        Ok(())
    }
}

/// Per-node stencil data for the disk lattice.
struct DiskNode {
    node: usize,
    pos: [f64; 2],
    // arms: east, west, north, south (distance to neighbour or boundary)
    arms: [f64; 4],
    // neighbour unknown index, None when the arm ends on the boundary
    nbrs: [Option<usize>; 4],
    // diagonal neighbours ne, nw, se, sw
    corners: [Option<usize>; 4],
}

pub(crate) struct DiskStepper<'a> {
    coeffs: &'a CoefficientSet,
    nodes: Vec<DiskNode>,
    a: Vec<[f64; 4]>,
    sigma: Vec<f64>,
    cached: bool,
    matrix: Option<(f64, Csr)>,
    work: Vec<f64>,
    rhs: Vec<f64>,
    gbuf: Vec<f64>,
}

fn arm_length(center: [f64; 2], radius: f64, p: [f64; 2], dir: [f64; 2], h: f64) -> f64 {
    // smallest s in (0, h] with |p + s dir - c| = radius, else h
    let q = [p[0] + h * dir[0], p[1] + h * dir[1]];
    let inside = (q[0] - center[0]).powi(2) + (q[1] - center[1]).powi(2) < radius * radius;
    if inside {
        return h;
    }
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    let b = dx * dir[0] + dy * dir[1];
    let c = dx * dx + dy * dy - radius * radius;
    let s = -b + (b * b - c).max(0.0).sqrt();
    s.clamp(1e-3 * h, h)
}

impl<'a> DiskStepper<'a> {
    fn new(coeffs: &'a CoefficientSet, domain: &Domain, grid: &Grid) -> Self {
        let (center, radius) = match *domain {
            Domain::Disk { center, radius } => (center, radius),
            _ => unreachable!("disk stepper on non-disk domain"),
        };
        let (side, h) = match *grid {
            Grid::Square { side, h, .. } => (side, h),
            _ => unreachable!(),
        };
        let mut unknown = vec![None; grid.len()];
        let mut count = 0;
        for (i, slot) in unknown.iter_mut().enumerate() {
            if domain.inside(&grid.position(i)) {
                *slot = Some(count);
                count += 1;
            }
        }
        let at = |ix: isize, iy: isize| -> Option<usize> {
            if ix < 0 || iy < 0 || ix >= side as isize || iy >= side as isize {
                None
            } else {
                unknown[iy as usize * side + ix as usize]
            }
        };
        let mut nodes = Vec::with_capacity(count);
        for i in 0..grid.len() {
            if unknown[i].is_none() {
                continue;
            }
            let p = grid.position(i);
            let p = [p[0], p[1]];
            let (ix, iy) = ((i % side) as isize, (i / side) as isize);
            let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
            let offs = [(1, 0), (-1, 0), (0, 1), (0, -1)];
            let mut arms = [h; 4];
            let mut nbrs = [None; 4];
            for q in 0..4 {
                nbrs[q] = at(ix + offs[q].0, iy + offs[q].1);
                if nbrs[q].is_none() {
                    arms[q] = arm_length(center, radius, p, dirs[q], h);
                }
            }
            let corners = [at(ix + 1, iy + 1), at(ix - 1, iy + 1), at(ix + 1, iy - 1), at(ix - 1, iy - 1)];
            nodes.push(DiskNode { node: i, pos: p, arms, nbrs, corners });
        }
        let d1 = coeffs.noise_dim();
        let mut s = DiskStepper {
            coeffs,
            a: vec![[0.0; 4]; nodes.len()],
            sigma: vec![0.0; nodes.len() * 2 * d1],
            work: vec![0.0; nodes.len()],
            rhs: vec![0.0; nodes.len()],
            gbuf: vec![0.0; d1],
            nodes,
            cached: false,
            matrix: None,
        };
        if !coeffs.is_time_dependent() {
            s.load(0.0);
            s.cached = true;
        }
        s
    }

    fn load(&mut self, t: f64) {
        let d1 = self.coeffs.noise_dim();
        for (k, nd) in self.nodes.iter().enumerate() {
            self.coeffs.eval_a(t, &nd.pos, &mut self.a[k]);
            self.coeffs.eval_sigma(t, &nd.pos, &mut self.sigma[k * 2 * d1..(k + 1) * 2 * d1]);
        }
        self.matrix = None;
    }

    fn value(u: &[f64], idx: Option<usize>) -> f64 {
        idx.map_or(0.0, |j| u[j])
    }

    fn gradient(nd: &DiskNode, u: &[f64], center: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for axis in 0..2 {
            let (hp, hm) = (nd.arms[2 * axis], nd.arms[2 * axis + 1]);
            let (up, um) = (Self::value(u, nd.nbrs[2 * axis]), Self::value(u, nd.nbrs[2 * axis + 1]));
            g[axis] = (hm * hm * up - hp * hp * um + (hp * hp - hm * hm) * center) / (hp * hm * (hp + hm));
        }
        g
    }

    fn assemble(&self, dt: f64) -> Csr {
        let rows = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, nd)| {
                let a = self.a[k];
                let mut row = vec![(k, 1.0)];
                for axis in 0..2 {
                    let coef = a[axis * 2 + axis];
                    let (hp, hm) = (nd.arms[2 * axis], nd.arms[2 * axis + 1]);
                    let scale = 2.0 / (hp + hm);
                    row[0].1 += dt * coef * scale * (1.0 / hp + 1.0 / hm);
                    if let Some(j) = nd.nbrs[2 * axis] {
                        row.push((j, -dt * coef * scale / hp));
                    }
                    if let Some(j) = nd.nbrs[2 * axis + 1] {
                        row.push((j, -dt * coef * scale / hm));
                    }
                }
                // mixed term 2 a12 D_xD_y; corners outside the disk carry the boundary value 0
                let h = nd.arms.iter().cloned().fold(0.0, f64::max);
                let mixed = 2.0 * a[1] * dt / (4.0 * h * h);
                let signs = [1.0, -1.0, -1.0, 1.0];
                for q in 0..4 {
                    if let Some(j) = nd.corners[q] {
                        row.push((j, -mixed * signs[q]));
                    }
                }
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    fn step(&mut self, u: &mut [f64], t: f64, dt: f64, dw: &[f64]) -> Result<()> {
        let d1 = self.coeffs.noise_dim();
        if !self.cached {
            self.load(t);
        }
        if self.matrix.as_ref().is_none_or(|(mdt, _)| *mdt != dt) {
            self.matrix = Some((dt, self.assemble(dt)));
        }
        for (k, nd) in self.nodes.iter().enumerate() {
            self.work[k] = u[nd.node];
        }
        for (k, nd) in self.nodes.iter().enumerate() {
            let uk = self.work[k];
            let g = Self::gradient(nd, &self.work, uk);
            let mut r = uk + dt * self.coeffs.eval_f(t, &nd.pos, uk, &g);
            self.coeffs.eval_g(t, &nd.pos, uk, &mut self.gbuf);
            let sig = &self.sigma[k * 2 * d1..(k + 1) * 2 * d1];
            for q in 0..d1 {
                let transport = sig[q] * g[0] + sig[d1 + q] * g[1];
                r += (transport + self.gbuf[q]) * dw[q];
            }
            self.rhs[k] = r;
        }
        let (_, m) = self.matrix.as_ref().unwrap();
        let mut x = self.work.clone();
        linalg::bicgstab(m, &self.rhs, &mut x, 1e-12, 2000)
            .ok_or_else(|| LabError::Numerical { t, reason: "BiCGSTAB did not converge".into() })?;
        u.fill(0.0);
        for (k, nd) in self.nodes.iter().enumerate() {
            u[nd.node] = x[k];
        }
        Ok(())
    }
}
