//! The frequency-localized parametrix
//!
//! ```text
//! phi_j(t,x) = int_S2 int_0^inf e^{i lambda u(t,x,omega)} psi(2^-j lambda) f(lambda omega) lambda^2 dlambda domega
//! ```
//!
//! and its first and second spatial derivatives, by product quadrature over
//! the sphere and the frequency band. Flat phases take a one-dimensional
//! route through the plane-wave expansion
//! `int_S2 e^{i lambda x.omega} Y(omega) domega = 4 pi i^l j_l(lambda |x|) Y(x/|x|)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::{j1_over_z, spherical_jn};
use crate::eikonal::PhaseField;
use crate::error::{Error, Result};
use crate::grid::{SpacetimeGrid, SpacetimePoint};
use crate::quadrature::{sphere_degree_for, LineRule, SphereRule};
use crate::sphere::Vec3;
use crate::window::DyadicWindow;

/// Refinement changes above this (relative to the sample's sup norm) are errors.
pub const UNDERRESOLVED: f64 = 1e-3;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Radial {
    Constant,
    Power { exponent: f64 },
    Gaussian { center: f64, width: f64 },
}

impl Radial {
    pub fn eval(&self, lambda: f64) -> f64 {
        match *self {
            Radial::Constant => 1.0,
            Radial::Power { exponent } => lambda.powf(exponent),
            Radial::Gaussian { center, width } => (-((lambda - center) / width).powi(2)).exp(),
        }
    }
}

/// Angular factor: the constant 1 or an orthonormal real spherical harmonic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Angular {
    Constant,
    Harmonic { degree: u32, order: i32 },
}

impl Angular {
    pub fn degree(&self) -> u32 {
        match *self {
            Angular::Constant => 0,
            Angular::Harmonic { degree, .. } => degree,
        }
    }

    pub fn eval(&self, w: &Vec3) -> f64 {
        let (degree, order) = match *self {
            Angular::Constant => return 1.0,
            Angular::Harmonic { degree, order } => (degree, order),
        };
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        let c2 = (15.0 / (4.0 * PI)).sqrt();
        match (degree, order) {
            (0, 0) => 0.5 / PI.sqrt(),
            (1, -1) => c1 * w.y,
            (1, 0) => c1 * w.z,
            (1, 1) => c1 * w.x,
            (2, -2) => c2 * w.x * w.y,
            (2, -1) => c2 * w.y * w.z,
            (2, 0) => (5.0 / (16.0 * PI)).sqrt() * (3.0 * w.z * w.z - 1.0),
            (2, 1) => c2 * w.x * w.z,
            (2, 2) => 0.5 * c2 * (w.x * w.x - w.y * w.y),
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileTerm {
    pub radial: Radial,
    pub angular: Angular,
    /// `[re, im]`.
    #[serde(default = "unit_coefficient")]
    pub coefficient: [f64; 2],
}

fn unit_coefficient() -> [f64; 2] {
    [1.0, 0.0]
}

impl ProfileTerm {
    pub fn coefficient(&self) -> Complex64 {
        Complex64::new(self.coefficient[0], self.coefficient[1])
    }
}

/// `f(lambda omega) = sum_k c_k radial_k(lambda) angular_k(omega)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub terms: Vec<ProfileTerm>,
}

impl FrequencyProfile {
    pub fn zero() -> Self {
        FrequencyProfile { terms: Vec::new() }
    }

    pub fn radial(radial: Radial) -> Self {
        Self::term(radial, Angular::Constant)
    }

    pub fn term(radial: Radial, angular: Angular) -> Self {
        FrequencyProfile {
            terms: vec![ProfileTerm {
                radial,
                angular,
                coefficient: unit_coefficient(),
            }],
        }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let z = t.coefficient() * c;
                ProfileTerm {
                    coefficient: [z.re, z.im],
                    ..*t
                }
            })
            .collect();
        FrequencyProfile { terms }
    }

    pub fn plus(&self, other: &FrequencyProfile) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().copied());
        FrequencyProfile { terms }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, term) in self.terms.iter().enumerate() {
            let path = format!("profile.terms[{k}]");
            if let Angular::Harmonic { degree, order } = term.angular {
                if degree > 2 || order.unsigned_abs() > degree {
                    return Err(Error::config(
                        &path,
                        format!("harmonic (degree {degree}, order {order}) not in the registry (degree <= 2)"),
                    ));
                }
            }
            match term.radial {
                Radial::Gaussian { width, center } if !(width > 0.0) || !center.is_finite() => {
                    return Err(Error::config(&path, "gaussian radial profile needs width > 0"));
                }
                Radial::Power { exponent } if !exponent.is_finite() => {
                    return Err(Error::config(&path, "power exponent must be finite"));
                }
                _ => {}
            }
            if !term.coefficient.iter().all(|c| c.is_finite()) {
                return Err(Error::config(&path, "coefficient must be finite"));
            }
        }
        Ok(())
    }

    pub fn angular_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.angular.degree()).max().unwrap_or(0)
    }

    pub fn is_angular_constant(&self) -> bool {
        self.terms.iter().all(|t| t.angular == Angular::Constant)
    }

    pub fn eval(&self, lambda: f64, omega: &Vec3) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coefficient() * t.radial.eval(lambda) * t.angular.eval(omega))
            .sum()
    }

    /// `|| psi(2^-j lambda) f ||_{L^2(R^3)}`.
    pub fn data_norm(&self, window: &DyadicWindow) -> f64 {
        let sphere = SphereRule::with_degree(2 * self.angular_degree() as usize + 2);
        let line = window.rule(200);
        let mut total = 0.0;
        for (&l, &wl) in line.nodes.iter().zip(&line.weights) {
            let shell: f64 = sphere
                .nodes
                .iter()
                .zip(&sphere.weights)
                .map(|(w, ws)| ws * self.eval(l, w).norm_sqr())
                .sum();
            total += wl * (window.eval(l) * l).powi(2) * shell;
        }
        total.sqrt()
    }
}

/// Tensor weights for a sample set ordered time-slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorWeights {
    pub times: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub space_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<SpacetimePoint>,
    pub weights: Option<TensorWeights>,
    /// Points lie on one ray and the spatial weights carry `4 pi r^2`;
    /// only meaningful for rotation-invariant fields.
    pub radial: bool,
}

fn trapezoid(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * (nodes[k + 1] - nodes[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

impl SampleSet {
    /// Unweighted probe points.
    pub fn probes(points: Vec<SpacetimePoint>) -> Self {
        SampleSet {
            points,
            weights: None,
            radial: false,
        }
    }

    /// The grid's points with trapezoid weights in t and in each axis.
    pub fn from_grid(grid: &SpacetimeGrid) -> Self {
        let wt = trapezoid(&grid.times);
        let wa = trapezoid(&grid.axis);
        let mut space = Vec::with_capacity(wa.len().pow(3));
        for a in &wa {
            for b in &wa {
                for c in &wa {
                    space.push(a * b * c);
                }
            }
        }
        SampleSet {
            points: grid.points(),
            weights: Some(TensorWeights {
                times: grid.times.clone(),
                time_weights: wt,
                space_weights: space,
            }),
            radial: false,
        }
    }

    /// Points `(t, r e_z)` for radial fields; spatial weights `4 pi r^2 w_r`.
    pub fn radial(times: &LineRule, radii: &LineRule) -> Self {
        let mut points = Vec::with_capacity(times.len() * radii.len());
        for &t in &times.nodes {
            for &r in &radii.nodes {
                points.push(SpacetimePoint { t, x: [0.0, 0.0, r] });
            }
        }
        SampleSet {
            points,
            weights: Some(TensorWeights {
                times: times.nodes.clone(),
                time_weights: times.weights.clone(),
                space_weights: radii
                    .nodes
                    .iter()
                    .zip(&radii.weights)
                    .map(|(r, w)| 4.0 * PI * r * r * w)
                    .collect(),
            }),
            radial: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Field values: `components()` complex numbers per point, point-major.
/// Gradients are `[d1, d2, d3]`, hessians row-major `d_l d_m`.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub j: u32,
    pub order: u8,
    pub samples: SampleSet,
    pub values: Vec<Complex64>,
    /// Largest change under rule doubling relative to the sup norm (0 if unchecked).
    pub refinement_change: f64,
}

pub fn components(order: u8) -> usize {
    match order {
        0 => 1,
        1 => 3,
        _ => 9,
    }
}

impl FieldSample {
    pub fn components(&self) -> usize {
        components(self.order)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, i: usize) -> &[Complex64] {
        let c = self.components();
        &self.values[i * c..(i + 1) * c]
    }

    /// Euclidean (Frobenius) magnitude of the components at point `i`.
    pub fn magnitude(&self, i: usize) -> f64 {
        self.at(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len()).map(|i| self.magnitude(i)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Use the sphere x band product rule even when a flat reduction exists.
    pub force_direct: bool,
    pub check_refinement: bool,
    pub nodes_per_wavelength: f64,
    pub min_line_nodes: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            force_direct: false,
            check_refinement: true,
            nodes_per_wavelength: 6.0,
            min_line_nodes: 96,
        }
    }
}

impl QuadratureOptions {
    pub fn direct() -> Self {
        QuadratureOptions {
            force_direct: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nodes_per_wavelength >= 6.0) {
            return Err(Error::config(
                "quadrature.nodes_per_wavelength",
                "at least 6 nodes per wavelength are required",
            ));
        }
        if self.min_line_nodes < 8 {
            return Err(Error::config("quadrature.min_line_nodes", "must be at least 8"));
        }
        Ok(())
    }

    /// Gauss nodes on `band` resolving `e^{i lambda phase}` for `|phase| <= span`.
    pub fn line_nodes(&self, band: (f64, f64), span: f64) -> usize {
        let waves = (band.1 - band.0) * span.abs() / (2.0 * PI);
        self.min_line_nodes + (self.nodes_per_wavelength * waves).ceil() as usize
    }
}

pub fn eval_parametrix(
    phase: &dyn PhaseField,
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    samples: &SampleSet,
    options: &QuadratureOptions,
) -> Result<FieldSample> {
    eval_field(phase, window, profile, samples, 0, options)
}

pub fn eval_gradient(
    phase: &dyn PhaseField,
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    samples: &SampleSet,
    options: &QuadratureOptions,
) -> Result<FieldSample> {
    eval_field(phase, window, profile, samples, 1, options)
}

pub fn eval_hessian(
    phase: &dyn PhaseField,
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    samples: &SampleSet,
    options: &QuadratureOptions,
) -> Result<FieldSample> {
    eval_field(phase, window, profile, samples, 2, options)
}

/// `phi_j` (order 0), `grad phi_j` (1) or `hess phi_j` (2) on `samples`.
pub fn eval_field(
    phase: &dyn PhaseField,
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    samples: &SampleSet,
    order: u8,
    options: &QuadratureOptions,
) -> Result<FieldSample> {
    if order > 2 {
        return Err(Error::Invalid(format!("derivative order {order} > 2")));
    }
    profile.validate()?;
    options.validate()?;
    let reducible = phase.is_flat() && !options.force_direct && (order == 0 || profile.is_angular_constant());
    if samples.radial && !(phase.is_flat() && profile.is_angular_constant()) {
        return Err(Error::Invalid(
            "radial sample sets need a flat phase and an angular-constant profile".into(),
        ));
    }
    let pairs: Vec<(Vec<Complex64>, Vec<Complex64>)> = samples
        .points
        .par_iter()
        .map(|p| {
            let at = |refine: usize| {
                if reducible {
                    Ok(reduced_point(window, profile, p, order, options, refine))
                } else {
                    direct_point(phase, window, profile, p, order, options, refine)
                }
            };
            let coarse = at(1)?;
            let fine = if options.check_refinement {
                at(2)?
            } else {
                coarse.clone()
            };
            Ok((coarse, fine))
        })
        .collect::<Result<_>>()?;
    let c = components(order);
    let mut values = Vec::with_capacity(c * pairs.len());
    let mut sup = 0.0f64;
    let mut change = 0.0f64;
    for (coarse, fine) in &pairs {
        let mag = fine.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let diff = coarse
            .iter()
            .zip(fine)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        sup = sup.max(mag);
        change = change.max(diff);
        values.extend_from_slice(fine);
    }
    let relative_change = if sup > 0.0 { change / sup } else { 0.0 };
    if relative_change > UNDERRESOLVED {
        return Err(Error::Underresolved { relative_change });
    }
    Ok(FieldSample {
        j: window.j,
        order,
        samples: samples.clone(),
        values,
        refinement_change: relative_change,
    })
}

/// Extra sphere span for non-flat phases, whose omega-dependence is not exactly `x . omega`.
fn phase_slack(phase: &dyn PhaseField, t: f64, r: f64) -> f64 {
    2.0 * phase.epsilon() * (1.0 + t.abs() + r)
}

fn direct_point(
    phase: &dyn PhaseField,
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    p: &SpacetimePoint,
    order: u8,
    options: &QuadratureOptions,
    refine: usize,
) -> Result<Vec<Complex64>> {
    let x = p.space();
    let r = x.norm();
    let band = window.band();
    let slack = phase_slack(phase, p.t, r);
    let degree = sphere_degree_for(band.1 * (r + slack), (profile.angular_degree() + order as u32) as usize);
    let sphere = SphereRule::with_degree(degree * refine);
    let line = window.rule(options.line_nodes(band, p.t.abs() + r + slack) * refine);
    let tables: Vec<Vec<f64>> = profile
        .terms
        .iter()
        .map(|term| {
            line.nodes
                .iter()
                .zip(&line.weights)
                .map(|(&l, &w)| w * window.eval(l) * l * l * term.radial.eval(l))
                .collect()
        })
        .collect();
    let mut out = vec![ZERO; components(order)];
    if profile.terms.is_empty() {
        return Ok(out);
    }
    let mut amplitude = vec![ZERO; line.len()];
    for (omega, &wo) in sphere.nodes.iter().zip(&sphere.weights) {
        let jet = if order == 0 {
            None
        } else {
            Some(phase.jet(p.t, &x, omega, order)?)
        };
        let u = match &jet {
            Some(j) => j.u,
            None => phase.phase(p.t, &x, omega)?,
        };
        amplitude.fill(ZERO);
        for (term, table) in profile.terms.iter().zip(&tables) {
            let c = term.coefficient() * term.angular.eval(omega);
            for (a, &v) in amplitude.iter_mut().zip(table) {
                *a += c * v;
            }
        }
        let mut s = [ZERO; 3];
        for (&l, a) in line.nodes.iter().zip(&amplitude) {
            let (sn, cs) = (l * u).sin_cos();
            let ae = a * Complex64::new(cs, sn);
            s[0] += ae;
            s[1] += ae * l;
            s[2] += ae * (l * l);
        }
        match &jet {
            None => out[0] += s[0] * wo,
            Some(jet) if order == 1 => {
                for i in 0..3 {
                    out[i] += I * s[1] * (wo * jet.grad[i]);
                }
            }
            Some(jet) => {
                for a in 0..3 {
                    for b in 0..3 {
                        out[3 * a + b] += (-s[2] * (jet.grad[a] * jet.grad[b]) + I * s[1] * jet.hessian[(a, b)]) * wo;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Flat reduction: one band integral per term with spherical Bessel kernels.
fn reduced_point(
    window: &DyadicWindow,
    profile: &FrequencyProfile,
    p: &SpacetimePoint,
    order: u8,
    options: &QuadratureOptions,
    refine: usize,
) -> Vec<Complex64> {
    let x = p.space();
    let r = x.norm();
    let dir = if r > 0.0 { x / r } else { Vec3::z() };
    let band = window.band();
    let line = window.rule(options.line_nodes(band, p.t.abs() + r) * refine);
    let mut out = vec![ZERO; components(order)];
    if order == 0 {
        for term in &profile.terms {
            let l_deg = term.angular.degree();
            let mut acc = ZERO;
            for (&l, &w) in line.nodes.iter().zip(&line.weights) {
                let (sn, cs) = (l * p.t).sin_cos();
                let weight = w * window.eval(l) * l * l * term.radial.eval(l);
                acc += Complex64::new(cs, -sn) * (weight * spherical_jn(l_deg, l * r));
            }
            out[0] += acc * term.coefficient() * I.powu(l_deg) * (4.0 * PI * term.angular.eval(&dir));
        }
        return out;
    }
    // angular-constant: phi = 4 pi int e^{-i l t} R(l) psi l^2 j0(l r)
    let mut d_r = ZERO;
    let mut d_rr = ZERO;
    let mut d_r_over_r = ZERO;
    for (&l, &w) in line.nodes.iter().zip(&line.weights) {
        let radial: Complex64 = profile.terms.iter().map(|t| t.coefficient() * t.radial.eval(l)).sum();
        let (sn, cs) = (l * p.t).sin_cos();
        let a = Complex64::new(cs, -sn) * radial * (w * window.eval(l) * l * l);
        let z = l * r;
        let j1z = j1_over_z(z);
        d_r -= a * (l * spherical_jn(1, z));
        d_rr += a * (l * l * (2.0 * j1z - spherical_jn(0, z)));
        d_r_over_r -= a * (l * l * j1z);
    }
    let scale = 4.0 * PI;
    if order == 1 {
        for i in 0..3 {
            out[i] = d_r * (scale * dir[i]);
        }
    } else {
        for a in 0..3 {
            for b in 0..3 {
                let radial_part = dir[a] * dir[b];
                let tangential = if a == b { 1.0 } else { 0.0 } - radial_part;
                out[3 * a + b] = (d_rr * radial_part + d_r_over_r * tangential) * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eikonal::FlatPhase;

    fn probe(t: f64, x: [f64; 3]) -> SampleSet {
        SampleSet::probes(vec![SpacetimePoint { t, x }])
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let rule = SphereRule::with_degree(8);
        let mut modes = vec![];
        for l in 0..=2u32 {
            for m in -(l as i32)..=(l as i32) {
                modes.push(Angular::Harmonic { degree: l, order: m });
            }
        }
        for a in &modes {
            for b in &modes {
                let g: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(w, q)| q * a.eval(w) * b.eval(w))
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-13, "{a:?} {b:?}: {g}");
            }
        }
    }

    #[test]
    fn reduced_and_direct_agree_for_harmonic() {
        let window = DyadicWindow::new(1);
        let profile = FrequencyProfile::term(
            Radial::Gaussian {
                center: 2.0,
                width: 1.0,
            },
            Angular::Harmonic { degree: 2, order: 1 },
        );
        let s = probe(0.3, [0.4, -0.2, 0.5]);
        let a = eval_parametrix(&FlatPhase, &window, &profile, &s, &Default::default()).unwrap();
        let b = eval_parametrix(&FlatPhase, &window, &profile, &s, &QuadratureOptions::direct()).unwrap();
        assert!((a.values[0] - b.values[0]).norm() < 1e-10 * a.values[0].norm());
    }

    #[test]
    fn reduced_derivatives_match_direct() {
        let window = DyadicWindow::new(2);
        let profile = FrequencyProfile::radial(Radial::Constant);
        let s = probe(0.2, [0.3, 0.1, -0.25]);
        for order in [1u8, 2] {
            let a = eval_field(&FlatPhase, &window, &profile, &s, order, &Default::default()).unwrap();
            let b = eval_field(&FlatPhase, &window, &profile, &s, order, &QuadratureOptions::direct()).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).norm() < 1e-9 * a.sup_norm(), "order {order}");
            }
        }
    }

    #[test]
    fn zero_profile_vanishes() {
        let s = probe(0.5, [0.1, 0.2, 0.3]);
        let f = eval_hessian(
            &FlatPhase,
            &DyadicWindow::new(3),
            &FrequencyProfile::zero(),
            &s,
            &QuadratureOptions::direct(),
        )
        .unwrap();
        assert!(f.values.iter().all(|z| *z == ZERO));
        assert_eq!(f.refinement_change, 0.0);
    }

    #[test]
    fn registry_rejects_high_modes() {
        let p = FrequencyProfile::term(Radial::Constant, Angular::Harmonic { degree: 3, order: 0 });
        assert!(matches!(p.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn data_norm_of_constant_profile() {
        let w = DyadicWindow::new(2);
        let n = FrequencyProfile::radial(Radial::Constant).data_norm(&w);
        let direct = w.rule(300).integrate(|l| (w.eval(l) * l).powi(2)) * 4.0 * PI;
        assert!((n * n - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn grid_weights_integrate_constant() {
        let grid = SpacetimeGrid::uniform(5, 4, 0.5);
        let s = SampleSet::from_grid(&grid);
        let w = s.weights.unwrap();
        let total: f64 = w.time_weights.iter().sum::<f64>() * w.space_weights.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-14);
    }
}
