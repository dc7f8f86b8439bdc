use serde::{Deserialize, Serialize};

use crate::sphere::Vec3;

/// A spacetime point `(t, x)` in the coordinates of the foliation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimePoint {
    pub t: f64,
    pub x: [f64; 3],
}

impl SpacetimePoint {
    pub fn new(t: f64, x: Vec3) -> Self {
        SpacetimePoint { t, x: [x.x, x.y, x.z] }
    }

    pub fn space(&self) -> Vec3 {
        Vec3::new(self.x[0], self.x[1], self.x[2])
    }

    /// The point `(t / 2^j, x / 2^j)`.
    pub fn unscaled(&self, j: u32) -> Self {
        let s = (2.0f64).powi(j as i32);
        SpacetimePoint::new(self.t / s, self.space() / s)
    }
}

/// Tensor grid `times x axis^3` over `[0,1] x [-r, r]^3` (or any sub-box).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpacetimeGrid {
    pub times: Vec<f64>,
    pub axis: Vec<f64>,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl SpacetimeGrid {
    pub fn uniform(n_times: usize, n_axis: usize, half_width: f64) -> Self {
        SpacetimeGrid {
            times: linspace(0.0, 1.0, n_times),
            axis: linspace(-half_width, half_width, n_axis),
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        let n = self.axis.len();
        [self.times.len(), n, n, n]
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.axis.len().pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in row-major order (t slowest, then x1, x2, x3).
    pub fn points(&self) -> Vec<SpacetimePoint> {
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.times {
            for &a in &self.axis {
                for &b in &self.axis {
                    for &c in &self.axis {
                        out.push(SpacetimePoint { t, x: [a, b, c] });
                    }
                }
            }
        }
        out
    }
}
