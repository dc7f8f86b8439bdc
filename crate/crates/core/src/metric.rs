//! Foliated Lorentzian metrics on `[0,1] x R^3`: Minkowski space and analytic
//! bump perturbations of it written in lapse/shift form
//!
//! ```text
//! g = -n^2 dt^2 + gamma_ij (dx^i + beta^i dt)(dx^j + beta^j dt)
//! n = 1 + eps a B,   beta = eps B s,   gamma = I + eps B C,
//! B(t, x) = (1 + nu t) exp(-|x - c|^2 / w^2).
//! ```
//!
//! Every component is a polynomial in the scalar bump `B`, so exact first
//! derivatives follow from the chain rule.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{linspace, SpacetimeGrid, SpacetimePoint};
use crate::sphere::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Minkowski,
    Perturbed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivativeScheme {
    #[default]
    Analytic,
    CentralDifference {
        step: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BumpProfile {
    pub center: [f64; 3],
    pub width: f64,
    /// Linear growth rate of the bump amplitude in t.
    pub time_rate: f64,
    /// Lapse coefficient `a`.
    pub lapse: f64,
    /// Shift direction `s`.
    pub shift: [f64; 3],
    /// Symmetric spatial coefficient matrix `C`.
    pub spatial: [[f64; 3]; 3],
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile {
            center: [0.0; 3],
            width: 1.0,
            time_rate: 0.5,
            lapse: 1.0,
            shift: [0.5, -0.3, 0.2],
            spatial: [[1.0, 0.3, 0.0], [0.3, -0.5, 0.2], [0.0, 0.2, 0.4]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
    #[serde(default)]
    pub bump: BumpProfile,
    #[serde(default = "default_radius")]
    pub domain_radius: f64,
    #[serde(default)]
    pub derivative_scheme: DerivativeScheme,
}

fn default_epsilon_max() -> f64 {
    0.1
}

fn default_radius() -> f64 {
    4.0
}

impl MetricSpec {
    pub fn minkowski() -> Self {
        MetricSpec {
            kind: MetricKind::Minkowski,
            epsilon: 0.0,
            epsilon_max: default_epsilon_max(),
            bump: BumpProfile::default(),
            domain_radius: default_radius(),
            derivative_scheme: DerivativeScheme::Analytic,
        }
    }

    pub fn perturbed(epsilon: f64) -> Self {
        MetricSpec {
            kind: MetricKind::Perturbed,
            epsilon,
            ..Self::minkowski()
        }
    }

    pub fn with_scheme(mut self, scheme: DerivativeScheme) -> Self {
        self.derivative_scheme = scheme;
        self
    }
}

/// Lapse, unit normal and induced geometry of the slice through a point.
#[derive(Clone, Copy, Debug)]
pub struct FoliationData {
    pub lapse: f64,
    /// Future unit normal `T^alpha`.
    pub normal: Vector4<f64>,
    pub shift: Vec3,
    pub induced_metric: Matrix3<f64>,
    pub induced_inverse: Matrix3<f64>,
    pub volume_density: f64,
}

/// Metric, inverse and their coordinate derivatives at one point.
#[derive(Clone, Copy, Debug)]
pub struct MetricPoint {
    pub g: Matrix4<f64>,
    pub g_inv: Matrix4<f64>,
    /// `dg[mu] = d_mu g_{alpha beta}`.
    pub dg: [Matrix4<f64>; 4],
    /// `dg_inv[mu] = d_mu g^{alpha beta}`.
    pub dg_inv: [Matrix4<f64>; 4],
}

/// Christoffel symbols `gamma[alpha][beta][gamma] = Gamma^alpha_{beta gamma}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffel(pub [[[f64; 4]; 4]; 4]);

impl Christoffel {
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_diff(&self, other: &Christoffel) -> f64 {
        let mut m = 0.0f64;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    m = m.max((self.0[a][b][c] - other.0[a][b][c]).abs());
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct SpacetimeMetric {
    spec: MetricSpec,
    center: Vec3,
    shift: Vec3,
    spatial: Matrix3<f64>,
}

const MINKOWSKI: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];

impl SpacetimeMetric {
    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn kind(&self) -> MetricKind {
        self.spec.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    pub fn domain_radius(&self) -> f64 {
        self.spec.domain_radius
    }

    pub fn is_flat(&self) -> bool {
        self.spec.kind == MetricKind::Minkowski || self.spec.epsilon == 0.0
    }

    pub fn contains(&self, t: f64, x: &Vec3) -> bool {
        let r = self.spec.domain_radius;
        (0.0..=1.0).contains(&t) && x.iter().all(|c| c.abs() <= r)
    }

    pub fn check_domain(&self, t: f64, x: &Vec3) -> Result<()> {
        if self.contains(t, x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                t,
                x: [x.x, x.y, x.z],
                radius: self.spec.domain_radius,
            })
        }
    }

    /// Bump value and its spacetime gradient `(d_t B, d_x B)`.
    fn bump(&self, t: f64, x: &Vec3) -> (f64, [f64; 4]) {
        let profile = &self.spec.bump;
        let w2 = profile.width * profile.width;
        let d = x - self.center;
        let gauss = (-d.norm_squared() / w2).exp();
        let amp = 1.0 + profile.time_rate * t;
        let b = amp * gauss;
        let radial = -2.0 * b / w2;
        (b, [profile.time_rate * gauss, radial * d.x, radial * d.y, radial * d.z])
    }

    /// Components `G(B)` and `dG/dB` of the perturbed family.
    fn components_of_bump(&self, b: f64) -> (Matrix4<f64>, Matrix4<f64>) {
        let eps = self.spec.epsilon;
        let gamma = Matrix3::identity() + self.spatial * (eps * b);
        let d_gamma = self.spatial * eps;
        let lapse = 1.0 + eps * self.spec.bump.lapse * b;
        let d_lapse = eps * self.spec.bump.lapse;
        let beta = self.shift * (eps * b);
        let d_beta = self.shift * eps;

        let lower_shift = gamma * beta;
        let d_lower_shift = d_gamma * beta + gamma * d_beta;
        let g00 = -lapse * lapse + beta.dot(&lower_shift);
        let d_g00 = -2.0 * lapse * d_lapse + d_beta.dot(&lower_shift) + beta.dot(&d_lower_shift);

        let mut g = Matrix4::zeros();
        let mut dg = Matrix4::zeros();
        g[(0, 0)] = g00;
        dg[(0, 0)] = d_g00;
        for i in 0..3 {
            g[(0, i + 1)] = lower_shift[i];
            g[(i + 1, 0)] = lower_shift[i];
            dg[(0, i + 1)] = d_lower_shift[i];
            dg[(i + 1, 0)] = d_lower_shift[i];
            for k in 0..3 {
                g[(i + 1, k + 1)] = gamma[(i, k)];
                dg[(i + 1, k + 1)] = d_gamma[(i, k)];
            }
        }
        (g, dg)
    }

    /// `g_{alpha beta}(t, x)`.
    pub fn components(&self, t: f64, x: &Vec3) -> Matrix4<f64> {
        match self.spec.kind {
            MetricKind::Minkowski => Matrix4::from_diagonal(&Vector4::from(MINKOWSKI)),
            MetricKind::Perturbed => {
                let (b, _) = self.bump(t, x);
                self.components_of_bump(b).0
            }
        }
    }

    /// `[d_t g, d_1 g, d_2 g, d_3 g]` by the configured derivative scheme.
    pub fn derivatives(&self, t: f64, x: &Vec3) -> [Matrix4<f64>; 4] {
        match (self.spec.kind, self.spec.derivative_scheme) {
            (MetricKind::Minkowski, _) => [Matrix4::zeros(); 4],
            (MetricKind::Perturbed, DerivativeScheme::Analytic) => {
                let (b, db) = self.bump(t, x);
                let (_, dg_db) = self.components_of_bump(b);
                db.map(|d| dg_db * d)
            }
            (MetricKind::Perturbed, DerivativeScheme::CentralDifference { step }) => {
                let mut out = [Matrix4::zeros(); 4];
                for (mu, slot) in out.iter_mut().enumerate() {
                    let (mut tp, mut tm) = (t, t);
                    let (mut xp, mut xm) = (*x, *x);
                    if mu == 0 {
                        tp += step;
                        tm -= step;
                    } else {
                        xp[mu - 1] += step;
                        xm[mu - 1] -= step;
                    }
                    *slot = (self.components(tp, &xp) - self.components(tm, &xm)) / (2.0 * step);
                }
                out
            }
        }
    }

    pub fn at(&self, t: f64, x: &Vec3) -> MetricPoint {
        let g = self.components(t, x);
        let g_inv = invert(&g);
        let dg = self.derivatives(t, x);
        let dg_inv = dg.map(|d| -(g_inv * d * g_inv));
        MetricPoint { g, g_inv, dg, dg_inv }
    }

    /// Inverse metric and its gradient; the hot path of the characteristic flow.
    pub fn inverse_with_gradient(&self, t: f64, x: &Vec3) -> (Matrix4<f64>, [Matrix4<f64>; 4]) {
        match (self.spec.kind, self.spec.derivative_scheme) {
            (MetricKind::Minkowski, _) => (Matrix4::from_diagonal(&Vector4::from(MINKOWSKI)), [Matrix4::zeros(); 4]),
            (MetricKind::Perturbed, DerivativeScheme::Analytic) => {
                let (b, db) = self.bump(t, x);
                let (g, dg_db) = self.components_of_bump(b);
                let g_inv = invert(&g);
                let m = -(g_inv * dg_db * g_inv);
                (g_inv, db.map(|d| m * d))
            }
            _ => {
                let p = self.at(t, x);
                (p.g_inv, p.dg_inv)
            }
        }
    }

    pub fn foliation(&self, t: f64, x: &Vec3) -> FoliationData {
        foliation_from(&self.components(t, x))
    }
}

fn invert(g: &Matrix4<f64>) -> Matrix4<f64> {
    g.try_inverse().expect("metric components are invertible")
}

/// Foliation quantities read off from the components `g_{alpha beta}`.
pub fn foliation_from(g: &Matrix4<f64>) -> FoliationData {
    let g_inv = invert(g);
    let lapse = 1.0 / (-g_inv[(0, 0)]).sqrt();
    let normal = g_inv.column(0) * (-lapse);
    let shift = Vec3::new(
        -g_inv[(0, 1)] / g_inv[(0, 0)],
        -g_inv[(0, 2)] / g_inv[(0, 0)],
        -g_inv[(0, 3)] / g_inv[(0, 0)],
    );
    let induced_metric = g.fixed_view::<3, 3>(1, 1).into_owned();
    let induced_inverse = induced_metric
        .try_inverse()
        .expect("induced metric is positive definite");
    FoliationData {
        lapse,
        normal: normal.into_owned(),
        shift,
        induced_metric,
        induced_inverse,
        volume_density: induced_metric.determinant().sqrt(),
    }
}

/// Number of negative eigenvalues of a symmetric 4x4 matrix.
pub fn negative_eigenvalues(g: &Matrix4<f64>) -> usize {
    SymmetricEigen::new(*g).eigenvalues.iter().filter(|&&v| v < 0.0).count()
}

/// Builds the metric and validates signature and lapse bounds on a grid.
pub fn make_metric(spec: &MetricSpec) -> Result<SpacetimeMetric> {
    if spec.domain_radius <= 0.0 {
        return Err(Error::config("metric.domain_radius", "must be positive"));
    }
    if spec.kind == MetricKind::Perturbed {
        if !(spec.epsilon >= 0.0 && spec.epsilon <= spec.epsilon_max) {
            return Err(Error::config(
                "metric.epsilon",
                format!("epsilon {} outside [0, {}]", spec.epsilon, spec.epsilon_max),
            ));
        }
        if spec.bump.width <= 0.0 {
            return Err(Error::config("metric.bump.width", "must be positive"));
        }
        let c = spec.bump.spatial;
        if (0..3).any(|i| (0..3).any(|k| c[i][k] != c[k][i])) {
            return Err(Error::config("metric.bump.spatial", "must be symmetric"));
        }
    }
    if let DerivativeScheme::CentralDifference { step } = spec.derivative_scheme {
        if !(step > 0.0) {
            return Err(Error::config("metric.derivative_scheme.step", "must be positive"));
        }
    }
    let metric = SpacetimeMetric {
        spec: spec.clone(),
        center: Vec3::from(spec.bump.center),
        shift: Vec3::from(spec.bump.shift),
        spatial: Matrix3::from_fn(|i, k| spec.bump.spatial[i][k]),
    };
    let grid = SpacetimeGrid {
        times: linspace(0.0, 1.0, 5),
        axis: linspace(-spec.domain_radius, spec.domain_radius, 9),
    };
    let mut validation = grid.points();
    // the bump center is where the perturbation peaks
    for t in linspace(0.0, 1.0, 5) {
        validation.push(SpacetimePoint { t, x: spec.bump.center });
    }
    validation
        .par_iter()
        .map(|p| validate_point(&metric, p))
        .collect::<Result<Vec<()>>>()?;
    Ok(metric)
}

fn validate_point(metric: &SpacetimeMetric, p: &SpacetimePoint) -> Result<()> {
    let g = metric.components(p.t, &p.space());
    let negative = negative_eigenvalues(&g);
    if negative != 1 || g[(1, 1)] <= 0.0 {
        return Err(Error::Signature {
            t: p.t,
            x: p.x,
            negative,
        });
    }
    let lapse = foliation_from(&g).lapse;
    if !(0.5..=2.0).contains(&lapse) {
        return Err(Error::LapseBound { t: p.t, x: p.x, lapse });
    }
    Ok(())
}

/// `Gamma^alpha_{beta gamma}` at a point of `[0,1] x box`.
pub fn christoffel(metric: &SpacetimeMetric, point: &SpacetimePoint) -> Result<Christoffel> {
    let x = point.space();
    metric.check_domain(point.t, &x)?;
    Ok(christoffel_at(&metric.at(point.t, &x)))
}

pub fn christoffel_at(p: &MetricPoint) -> Christoffel {
    let mut out = [[[0.0; 4]; 4]; 4];
    for (a, plane) in out.iter_mut().enumerate() {
        for b in 0..4 {
            for c in b..4 {
                let mut s = 0.0;
                for d in 0..4 {
                    let ginv = p.g_inv[(a, d)];
                    if ginv != 0.0 {
                        s += ginv * (p.dg[b][(d, c)] + p.dg[c][(d, b)] - p.dg[d][(b, c)]);
                    }
                }
                plane[b][c] = 0.5 * s;
                plane[c][b] = 0.5 * s;
            }
        }
    }
    Christoffel(out)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VolumeReport {
    pub samples: usize,
    pub min_lapse: f64,
    pub max_lapse: f64,
    pub min_volume_density: f64,
    pub max_volume_density: f64,
    pub lapse_within_bounds: bool,
}

/// Lapse range (and slice volume density range) over a grid.
pub fn check_volume_comparison(metric: &SpacetimeMetric, grid: &SpacetimeGrid) -> VolumeReport {
    let points = grid.points();
    let init = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let (lo, hi, vlo, vhi) = points
        .par_iter()
        .map(|p| {
            let f = metric.foliation(p.t, &p.space());
            (f.lapse, f.lapse, f.volume_density, f.volume_density)
        })
        .reduce(|| init, |a, b| (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3)));
    VolumeReport {
        samples: points.len(),
        min_lapse: lo,
        max_lapse: hi,
        min_volume_density: vlo,
        max_volume_density: vhi,
        lapse_within_bounds: lo >= 0.5 && hi <= 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<(f64, Vec3)> {
        vec![
            (0.0, Vec3::zeros()),
            (0.3, Vec3::new(0.4, -0.2, 0.7)),
            (0.9, Vec3::new(-1.1, 0.5, 0.2)),
            (0.5, Vec3::new(3.0, -3.5, 2.0)),
        ]
    }

    #[test]
    fn minkowski_components_and_lapse() {
        let m = make_metric(&MetricSpec::minkowski()).unwrap();
        for (t, x) in sample_points() {
            let g = m.components(t, &x);
            assert_eq!(g, Matrix4::from_diagonal(&Vector4::new(-1.0, 1.0, 1.0, 1.0)));
            let f = m.foliation(t, &x);
            assert_eq!(f.lapse, 1.0);
            assert_eq!(f.volume_density, 1.0);
        }
    }

    #[test]
    fn zero_amplitude_matches_minkowski() {
        let flat = make_metric(&MetricSpec::minkowski()).unwrap();
        let zero = make_metric(&MetricSpec::perturbed(0.0)).unwrap();
        for (t, x) in sample_points() {
            assert_eq!(flat.components(t, &x), zero.components(t, &x));
            let c = christoffel(&zero, &SpacetimePoint::new(t, x)).unwrap();
            assert_eq!(c.max_abs(), 0.0);
        }
    }

    #[test]
    fn normal_is_unit_and_lapse_matches_dt() {
        let m = make_metric(&MetricSpec::perturbed(0.08)).unwrap();
        for (t, x) in sample_points() {
            let g = m.components(t, &x);
            let f = m.foliation(t, &x);
            let tt = f.normal.dot(&(g * f.normal));
            assert!((tt + 1.0).abs() < 1e-13);
            // n^{-1} = T(t) = T^0
            assert!((1.0 / f.lapse - f.normal[0]).abs() < 1e-13);
            assert_eq!(negative_eigenvalues(&g), 1);
            assert!((g - g.transpose()).norm() == 0.0);
        }
    }

    #[test]
    fn epsilon_above_max_is_rejected() {
        let err = make_metric(&MetricSpec::perturbed(0.2)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn lapse_bound_violation_is_reported() {
        let mut spec = MetricSpec::perturbed(0.1);
        spec.bump.lapse = -6.0;
        let err = make_metric(&spec).unwrap_err();
        assert!(matches!(err, Error::LapseBound { .. }), "{err}");
    }

    #[test]
    fn signature_violation_is_reported() {
        let mut spec = MetricSpec::perturbed(0.1);
        spec.bump.spatial = [[-20.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let err = make_metric(&spec).unwrap_err();
        assert!(matches!(err, Error::Signature { .. }), "{err}");
    }

    #[test]
    fn out_of_domain_christoffel() {
        let m = make_metric(&MetricSpec::minkowski()).unwrap();
        let err = christoffel(&m, &SpacetimePoint::new(1.5, Vec3::zeros())).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
        let err = christoffel(&m, &SpacetimePoint::new(0.5, Vec3::new(0.0, 4.5, 0.0))).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
    }

    #[test]
    fn christoffel_lower_symmetry() {
        let m = make_metric(&MetricSpec::perturbed(0.05)).unwrap();
        let c = christoffel(&m, &SpacetimePoint::new(0.4, Vec3::new(0.3, 0.2, -0.5))).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for d in 0..4 {
                    assert_eq!(c.0[a][b][d], c.0[a][d][b]);
                }
            }
        }
        assert!(c.max_abs() > 1e-3);
    }
}
