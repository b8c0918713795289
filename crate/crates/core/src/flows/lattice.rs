use serde::{Deserialize, Serialize};

/// Regular rectangular lattice of starting points in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    origin: Vec<f64>,
    steps: Vec<f64>,
    counts: Vec<usize>,
    /// Index of the first node along each axis; node `m` sits at `origin + step * (offset + m)`.
    offset: Vec<i64>,
}

impl Lattice {
    /// `cells + 1` equispaced points on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, cells: usize) -> Self {
        assert!(cells >= 1 && hi > lo, "line lattice needs hi > lo and at least one cell");
        Lattice { origin: vec![lo], steps: vec![(hi - lo) / cells as f64], counts: vec![cells + 1], offset: vec![0] }
    }

    /// `(cells + 1)^2` points on the rectangle `[lo, hi]`.
    pub fn rect(lo: [f64; 2], hi: [f64; 2], cells: usize) -> Self {
        assert!(cells >= 1 && hi[0] > lo[0] && hi[1] > lo[1], "degenerate rectangle");
        Lattice {
            origin: lo.to_vec(),
            steps: vec![(hi[0] - lo[0]) / cells as f64, (hi[1] - lo[1]) / cells as f64],
            counts: vec![cells + 1, cells + 1],
            offset: vec![0, 0],
        }
    }

    /// Bounding-box lattice of a point cloud (row-major, `dim` coordinates per point),
    /// padded by `pad` on every side.
    pub fn bounding(points: &[f64], dim: usize, pad: f64, cells: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points.chunks(dim) {
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        match dim {
            1 => Lattice::line(lo[0] - pad, hi[0] + pad, cells),
            _ => Lattice::rect([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad], cells),
        }
    }

    /// Lattice sharing this one's nodes, extended by whole cells so that it covers
    /// every point of the cloud with `pad` extra cells on each side.
    pub fn covering(&self, points: &[f64], pad: usize) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        for a in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in points.chunks(d) {
                lo = lo.min(p[a]);
                hi = hi.max(p[a]);
            }
            let first = ((lo - self.origin[a]) / self.steps[a]).floor() as i64 - pad as i64;
            let last = ((hi - self.origin[a]) / self.steps[a]).ceil() as i64 + pad as i64;
            out.offset[a] = first;
            out.counts[a] = (last - first + 1).max(2) as usize;
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    #[inline]
    fn coord(&self, axis: usize, m: usize) -> f64 {
        self.origin[axis] + self.steps[axis] * (self.offset[axis] + m as i64) as f64
    }

    pub fn lo(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(a, 0)).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(a, self.counts[a] - 1)).collect()
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        (0..self.dim()).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
    }

    /// Flat index of a multi-index; the first axis varies fastest.
    #[inline]
    pub fn flat(&self, ix: &[usize]) -> usize {
        match ix.len() {
            1 => ix[0],
            _ => ix[0] + self.counts[0] * ix[1],
        }
    }

    #[inline]
    pub fn multi(&self, i: usize) -> [usize; 2] {
        match self.dim() {
            1 => [i, 0],
            _ => [i % self.counts[0], i / self.counts[0]],
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let m = self.multi(i);
        (0..self.dim()).map(|a| self.coord(a, m[a])).collect()
    }

    /// All points, row-major, `dim` coordinates each.
    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.point(i)).collect()
    }

    /// Cell containing `y` (clamped to the lattice) and the local coordinate in each axis,
    /// which may fall outside `[0, 1]` when `y` lies outside the lattice.
    pub(crate) fn locate(&self, y: &[f64]) -> ([usize; 2], [f64; 2]) {
        let mut cell = [0usize; 2];
        let mut local = [0.0; 2];
        for a in 0..self.dim() {
            let mut pos = (y[a] - self.origin[a]) / self.steps[a] - self.offset[a] as f64;
            // land exactly on nodes that are only off by rounding
            if (pos - pos.round()).abs() < 1e-9 {
                pos = pos.round();
            }
            let c = (pos.floor().max(0.0) as usize).min(self.counts[a] - 2);
            cell[a] = c;
            local[a] = pos - c as f64;
        }
        (cell, local)
    }
}
