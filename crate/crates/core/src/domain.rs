use serde::{Deserialize, Serialize};

/// Bounded spatial domain with exact boundary distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Disk { center: [f64; 2], radius: f64 },
}

impl Domain {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Domain::Interval { lo, hi }
    }

    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        Domain::Disk { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Disk { .. } => 2,
        }
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match *self {
            Domain::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            Domain::Disk { center, radius } => radius - ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt(),
        }
    }

    /// `d(x, ∂G)` for points in the closure, zero outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.signed_distance(x).max(0.0)
    }

    pub fn inside(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > 0.0
    }

    /// Radius of the Minkowski extension `G+ = G + B_r` on which coefficients may live.
    pub fn extension_radius(&self) -> f64 {
        1.0
    }

    pub fn in_extension(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > -self.extension_radius()
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::Interval { lo, hi } => hi - lo,
            Domain::Disk { radius, .. } => 2.0 * radius,
        }
    }

    /// Outward unit normal of the nearest boundary point (undefined at the disk centre).
    pub fn outward_normal(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Domain::Interval { lo, hi } => vec![if x[0] - lo < hi - x[0] { -1.0 } else { 1.0 }],
            Domain::Disk { center, .. } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let r = (dx * dx + dy * dy).sqrt().max(1e-300);
                vec![dx / r, dy / r]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn disk_distance_is_exact() {
        let d = Domain::disk([0.5, -0.5], 2.0);
        assert_eq!(d.boundary_distance(&[0.5, -0.5]), 2.0);
        assert!((d.signed_distance(&[3.5, -0.5]) + 1.0).abs() < 1e-15);
        assert!(d.in_extension(&[3.0, -0.5]));
        assert!(!d.in_extension(&[4.0, -0.5]));
    }

    proptest! {
        #[test]
        fn positive_distance_iff_inside(x in -2.0f64..3.0, y in -2.0f64..3.0) {
            for d in [Domain::interval(0.0, 1.0), Domain::disk([0.5, 0.5], 1.0)] {
                let p = [x, y];
                prop_assert_eq!(d.boundary_distance(&p) > 0.0, d.inside(&p));
            }
        }

        #[test]
        fn distance_is_one_lipschitz(x in -2.0f64..3.0, y in -2.0f64..3.0, u in -2.0f64..3.0, v in -2.0f64..3.0) {
            for d in [Domain::interval(0.0, 1.0), Domain::disk([0.5, 0.5], 1.0)] {
                let a = [x, y];
                let b = [u, v];
                let dist = if d.dim() == 1 { (x - u).abs() } else { ((x - u).powi(2) + (y - v).powi(2)).sqrt() };
                prop_assert!((d.signed_distance(&a) - d.signed_distance(&b)).abs() <= dist + 1e-12);
            }
        }
    }
}
