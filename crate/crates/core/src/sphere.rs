//! Directions on the unit sphere: tangent frames, axis-relative spherical
//! coordinates and icosahedral direction sets.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// |omega_z| above this value switches to the polar chart.
const POLAR_CUTOFF: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    /// Frame built by projecting e_3 onto the tangent plane.
    Equatorial,
    /// Frame built by projecting e_1 onto the tangent plane (covers the caps around +-e_3).
    Polar,
}

/// Orthonormal basis (e1, e2) of the tangent plane at `omega`.
///
/// The frame is smooth inside each chart. All omega-derivatives in the crate
/// are components in this frame, so two quantities at the same direction are
/// always expressed in the same basis.
#[derive(Clone, Copy, Debug)]
pub struct TangentFrame {
    pub omega: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub chart: Chart,
}

impl TangentFrame {
    pub fn at(omega: &Vec3) -> Self {
        let omega = omega.normalize();
        let (reference, chart) = if omega.z.abs() <= POLAR_CUTOFF {
            (Vec3::z(), Chart::Equatorial)
        } else {
            (Vec3::x(), Chart::Polar)
        };
        let e1 = (reference - omega * reference.dot(&omega)).normalize();
        let e2 = omega.cross(&e1);
        TangentFrame { omega, e1, e2, chart }
    }

    pub fn basis(&self, a: usize) -> Vec3 {
        match a {
            0 => self.e1,
            _ => self.e2,
        }
    }

    /// Tangent 3-vector with frame components `v`.
    pub fn lift(&self, v: [f64; 2]) -> Vec3 {
        self.e1 * v[0] + self.e2 * v[1]
    }

    /// Frame components of the tangential part of `w`.
    pub fn project(&self, w: &Vec3) -> [f64; 2] {
        [w.dot(&self.e1), w.dot(&self.e2)]
    }

    /// Moves along the sphere by the tangent step with components `step`.
    pub fn exp(&self, step: [f64; 2]) -> Vec3 {
        let v = self.lift(step);
        let angle = v.norm();
        if angle < 1e-300 {
            return self.omega;
        }
        self.omega * angle.cos() + v * (angle.sin() / angle)
    }
}

/// Spherical coordinates (theta, azimuth) relative to a polar axis.
#[derive(Clone, Copy, Debug)]
pub struct AxisCoordinates {
    pub axis: Vec3,
    ref1: Vec3,
    ref2: Vec3,
}

impl AxisCoordinates {
    pub fn new(axis: &Vec3) -> Self {
        let frame = TangentFrame::at(axis);
        AxisCoordinates {
            axis: frame.omega,
            ref1: frame.e1,
            ref2: frame.e2,
        }
    }

    pub fn direction(&self, theta: f64, azimuth: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        self.axis * ct + (self.ref1 * ca + self.ref2 * sa) * st
    }

    /// Returns (theta, azimuth) with theta in [0, pi] and azimuth in [0, 2 pi).
    pub fn angles(&self, omega: &Vec3) -> (f64, f64) {
        let c = omega.dot(&self.axis).clamp(-1.0, 1.0);
        let perp = omega - self.axis * c;
        let theta = perp.norm().atan2(c);
        let mut azimuth = perp.dot(&self.ref2).atan2(perp.dot(&self.ref1));
        if azimuth < 0.0 {
            azimuth += std::f64::consts::TAU;
        }
        (theta, azimuth)
    }

    /// Unit tangent at `omega` pointing along increasing theta.
    pub fn meridian_tangent(&self, theta: f64, azimuth: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        -self.axis * st + (self.ref1 * ca + self.ref2 * sa) * ct
    }
}

/// Geodesic angle between two unit vectors.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Icosahedral direction set: level 0 has 12 vertices, level 1 has 42,
/// level 2 has 162 (each level splits every edge at its midpoint).
pub fn icosahedral_directions(level: u32) -> Vec<Vec3> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints = std::collections::BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    vertices
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosahedral_counts() {
        assert_eq!(icosahedral_directions(0).len(), 12);
        assert_eq!(icosahedral_directions(1).len(), 42);
        assert_eq!(icosahedral_directions(2).len(), 162);
        for w in icosahedral_directions(2) {
            assert!((w.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn frame_at_pole_is_e1_e2() {
        let f = TangentFrame::at(&Vec3::z());
        assert_eq!(f.chart, Chart::Polar);
        assert!((f.e1 - Vec3::x()).norm() < 1e-15);
        assert!((f.e2 - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn frames_are_orthonormal() {
        for w in icosahedral_directions(2) {
            let f = TangentFrame::at(&w);
            assert!(f.e1.dot(&f.e2).abs() < 1e-14);
            assert!(f.e1.dot(&f.omega).abs() < 1e-14);
            assert!((f.e1.norm() - 1.0).abs() < 1e-14);
            assert!((f.omega.cross(&f.e1) - f.e2).norm() < 1e-14);
        }
    }

    #[test]
    fn axis_angles_roundtrip() {
        let axes = AxisCoordinates::new(&Vec3::new(0.3, -0.4, 0.5).normalize());
        for &(theta, az) in &[(0.3, 0.1), (1.2, 3.0), (2.9, 6.0)] {
            let w = axes.direction(theta, az);
            let (t2, a2) = axes.angles(&w);
            assert!((t2 - theta).abs() < 1e-12 && (a2 - az).abs() < 1e-12);
            assert!((angle_between(&w, &axes.axis) - theta).abs() < 1e-12);
        }
    }
}
