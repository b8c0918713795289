use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{param, Result};

/// Resolution settings for [`super::solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells across the interval, or across the disk diameter.
    pub cells: usize,
    /// Time step as a multiple of the noise grid step.
    pub noise_stride: usize,
    /// Record every `record_stride`-th step (the final step is always kept).
    pub record_stride: usize,
}

impl GridSpec {
    pub fn new(cells: usize) -> Self {
        GridSpec { cells, noise_stride: 1, record_stride: 1 }
    }
    pub fn with_noise_stride(mut self, s: usize) -> Self {
        self.noise_stride = s;
        self
    }
    pub fn with_record_stride(mut self, s: usize) -> Self {
        self.record_stride = s;
        self
    }
}

/// Spatial lattice. Values are stored for every lattice node; nodes that are
/// not strictly inside the domain are Dirichlet nodes held at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    Line { lo: f64, h: f64, nodes: usize },
    Square { origin: [f64; 2], h: f64, side: usize },
}

impl Grid {
    pub fn for_domain(domain: &Domain, cells: usize) -> Result<Self> {
        if cells < 2 {
            return param(format!("need at least 2 cells, got {cells}"));
        }
        Ok(match *domain {
            Domain::Interval { lo, hi } => Grid::Line { lo, h: (hi - lo) / cells as f64, nodes: cells + 1 },
            Domain::Disk { center, radius } => Grid::Square {
                origin: [center[0] - radius, center[1] - radius],
                h: 2.0 * radius / cells as f64,
                side: cells + 1,
            },
        })
    }

    pub fn len(&self) -> usize {
        match *self {
            Grid::Line { nodes, .. } => nodes,
            Grid::Square { side, .. } => side * side,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> f64 {
        match *self {
            Grid::Line { h, .. } | Grid::Square { h, .. } => h,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Grid::Line { .. } => 1,
            Grid::Square { .. } => 2,
        }
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim() as i32)
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        match *self {
            Grid::Line { lo, h, .. } => vec![lo + i as f64 * h],
            Grid::Square { origin, h, side } => {
                vec![origin[0] + (i % side) as f64 * h, origin[1] + (i / side) as f64 * h]
            }
        }
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }
}

/// Space-time lattice of solution values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSolution {
    pub domain: Domain,
    pub grid: Grid,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `values[n][i]`: value at `times[n]` and lattice node `i`.
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
    pub stream: u64,
}

impl GridSolution {
    /// Samples a field `u(t, x)` on the lattice; nodes outside the open domain get 0.
    pub fn from_fn(domain: Domain, grid: Grid, times: Vec<f64>, u: impl Fn(f64, &[f64]) -> f64) -> Self {
        let pos = grid.positions();
        let values = times
            .iter()
            .map(|&t| pos.iter().map(|x| if domain.inside(x) { u(t, x) } else { 0.0 }).collect())
            .collect();
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        GridSolution { domain, grid, dt, times, values, seed: 0, stream: 0 }
    }

    pub fn boundary_distances(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.domain.boundary_distance(&self.grid.position(i))).collect()
    }

    /// Index of the recorded time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (n, &tn) in self.times.iter().enumerate() {
            if (tn - t).abs() < (self.times[best] - t).abs() {
                best = n;
            }
        }
        best
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("solution has at least one slice")
    }

    /// CSV with columns `t, x[, y], u`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let pos = self.grid.positions();
        if self.grid.dim() == 1 {
            writeln!(w, "t,x,u")?;
        } else {
            writeln!(w, "t,x,y,u")?;
        }
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, u) in pos.iter().zip(row) {
                if x.len() == 1 {
                    writeln!(w, "{t},{},{u}", x[0])?;
                } else {
                    writeln!(w, "{t},{},{},{u}", x[0], x[1])?;
                }
            }
        }
        Ok(())
    }
}
