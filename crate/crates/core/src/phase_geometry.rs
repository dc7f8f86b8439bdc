//! Geometry of the phase `phi(t,x,s,y,omega) = u(t,x,omega) - u(s,y,omega)`
//! for a pair of points with `t < s`: the maximal difference `m0`, the region
//! of `(s, y)` relative to the cone `S`, the crossing curve `D`, the
//! connecting curves `mu` and `eta`, and the lower bounds on `|phi|`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, SVector, SymmetricEigen, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eikonal::{Characteristics, Level, OpticalPoint};
use crate::error::{Error, Result};
use crate::grid::SpacetimePoint;
use crate::ode::Dopri5;
use crate::search::{brent, golden_max};
use crate::sphere::{angle_between, icosahedral_directions, AxisCoordinates, TangentFrame, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub from: SpacetimePoint,
    pub to: SpacetimePoint,
}

impl PhasePair {
    pub fn new(from: SpacetimePoint, to: SpacetimePoint) -> Result<Self> {
        if !(0.0 <= from.t && from.t < to.t && to.t <= 1.0) {
            return Err(Error::Invalid(format!(
                "pair needs 0 <= t < s <= 1, got t={} s={}",
                from.t, to.t
            )));
        }
        Ok(PhasePair { from, to })
    }

    pub fn gap(&self) -> f64 {
        self.to.t - self.from.t
    }

    /// Trichotomy band `1e-5 (s - t)`.
    pub fn region_tolerance(&self) -> f64 {
        1e-5 * self.gap()
    }
}

/// `u(t,x,omega) - u(s,y,omega)`.
pub fn phase(solver: &Characteristics, pair: &PhasePair, omega: &Vec3) -> Result<f64> {
    phase_between(solver, &pair.from, &pair.to, omega)
}

/// Phase between two arbitrary points (no ordering required).
pub fn phase_between(
    solver: &Characteristics,
    from: &SpacetimePoint,
    to: &SpacetimePoint,
    omega: &Vec3,
) -> Result<f64> {
    Ok(solver.u(from.t, &from.space(), omega)? - solver.u(to.t, &to.space(), omega)?)
}

/// `u(s,y,omega) - u(t,x,omega)`, the function maximized by `m0`.
fn difference(solver: &Characteristics, pair: &PhasePair, omega: &Vec3) -> Result<f64> {
    Ok(-phase(solver, pair, omega)?)
}

/// Frame components of the sphere gradient of `u(s,y,.) - u(t,x,.)`.
fn difference_gradient(solver: &Characteristics, pair: &PhasePair, omega: &Vec3) -> Result<Vec3> {
    let to = solver.foot(pair.to.t, &pair.to.space(), omega)?;
    let from = solver.foot(pair.from.t, &pair.from.space(), omega)?;
    Ok(to - from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    OnS,
    Interior,
    Exterior,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::OnS => "on_s",
            Region::Interior => "interior",
            Region::Exterior => "exterior",
        }
    }

    pub fn classify(m0: f64, tol: f64) -> Region {
        if m0.abs() <= tol {
            Region::OnS
        } else if m0 < 0.0 {
            Region::Interior
        } else {
            Region::Exterior
        }
    }
}

/// The crossing curve `D` as `theta = theta1(azimuth)` about `omega0`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Theta1Curve {
    pub azimuths: Vec<f64>,
    pub theta1: Vec<f64>,
    /// Sign changes of phi seen along each sampled meridian.
    pub sign_changes: Vec<usize>,
    /// `|phi|` at the located crossings.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PhaseDecomposition {
    pub pair: PhasePair,
    pub m0: f64,
    pub omega0: [f64; 3],
    pub region: Region,
    pub tol_region: f64,
    /// Set when the maximizer is not isolated; `maximizers` then lists the tied grid directions.
    pub degenerate: bool,
    pub maximizers: Vec<[f64; 3]>,
    pub theta1_curve: Option<Theta1Curve>,
    /// Crossing at azimuth 0 and `v0` there (exterior only).
    pub omega1: Option<[f64; 3]>,
    pub v0: Option<[f64; 2]>,
}

impl PhaseDecomposition {
    pub fn omega0(&self) -> Vec3 {
        Vec3::from(self.omega0)
    }

    pub fn axis(&self) -> AxisCoordinates {
        AxisCoordinates::new(&self.omega0())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecomposeOptions {
    pub grid_level: u32,
    pub azimuths: usize,
    pub meridian_samples: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            grid_level: 2,
            azimuths: 16,
            meridian_samples: 48,
        }
    }
}

/// Partial derivatives of `xi -> exp_omega(xi)` in the frame at omega.
fn exp_differential(frame: &TangentFrame, xi: [f64; 2]) -> [Vec3; 2] {
    let v = frame.lift(xi);
    let r = v.norm();
    if r < 1e-14 {
        return [frame.e1, frame.e2];
    }
    let (s, c) = r.sin_cos();
    let mut out = [Vec3::zeros(); 2];
    for (a, slot) in out.iter_mut().enumerate() {
        let dr = xi[a] / r;
        *slot = -frame.omega * (s * dr) + frame.basis(a) * (s / r) + v * ((r * c - s) / (r * r) * dr);
    }
    out
}

struct Polished {
    omega: Vec3,
    value: f64,
    degenerate: bool,
}

fn polish(solver: &Characteristics, pair: &PhasePair, start: Vec3, spacing: f64) -> Result<Polished> {
    let f = |w: &Vec3| difference(solver, pair, w);
    let mut omega = start;
    let mut value = f(&omega)?;
    let mut delta = spacing;
    for _ in 0..3 {
        for a in 0..2 {
            let frame = TangentFrame::at(&omega);
            let along = |tau: f64| {
                let mut step = [0.0; 2];
                step[a] = tau;
                frame.exp(step)
            };
            let (tau, v) = golden_max(|tau| f(&along(tau)), -delta, delta, 30)?;
            if v > value {
                omega = along(tau);
                value = v;
            }
        }
        delta /= 4.0;
    }
    let h = 1e-4;
    for _ in 0..25 {
        let frame = TangentFrame::at(&omega);
        let grad_at = |xi: [f64; 2]| -> Result<Vector2<f64>> {
            let w = frame.exp(xi);
            let d = difference_gradient(solver, pair, &w)?;
            let j = exp_differential(&frame, xi);
            Ok(Vector2::new(d.dot(&j[0]), d.dot(&j[1])))
        };
        let g = grad_at([0.0, 0.0])?;
        if g.norm() < 1e-13 {
            break;
        }
        let mut hess = Matrix2::zeros();
        for b in 0..2 {
            let mut xi = [0.0; 2];
            xi[b] = h;
            let gp = grad_at(xi)?;
            xi[b] = -h;
            let gm = grad_at(xi)?;
            hess.set_column(b, &((gp - gm) / (2.0 * h)));
        }
        let hess = (hess + hess.transpose()) * 0.5;
        let top = SymmetricEigen::new(hess).eigenvalues.max();
        if top > -1e-7 {
            return Ok(Polished {
                omega,
                value,
                degenerate: true,
            });
        }
        let mut step = -hess.try_inverse().expect("negative definite") * g;
        if step.norm() > 0.1 {
            step *= 0.1 / step.norm();
        }
        omega = frame.exp([step[0], step[1]]);
        value = f(&omega)?;
        if step.norm() < 1e-13 {
            break;
        }
    }
    Ok(Polished {
        omega,
        value,
        degenerate: false,
    })
}

/// Locates `theta1` on the meridian at `azimuth` about `omega0`.
/// Returns `(theta1, sign changes along the meridian, |phi(theta1)|)`.
pub fn find_theta1(
    solver: &Characteristics,
    pair: &PhasePair,
    axis: &AxisCoordinates,
    m0: f64,
    azimuth: f64,
    samples: usize,
) -> Result<(f64, usize, f64)> {
    let phi = |theta: f64| phase(solver, pair, &axis.direction(theta, azimuth));
    let mut thetas = vec![0.0];
    let mut values = vec![-m0];
    for k in 1..=samples {
        let theta = PI * k as f64 / samples as f64;
        thetas.push(theta);
        values.push(phi(theta)?);
    }
    let mut changes = 0;
    let mut bracket = None;
    let mut last = 0;
    for k in 1..values.len() {
        if values[k] == 0.0 {
            continue;
        }
        if values[last].signum() != values[k].signum() {
            changes += 1;
            if bracket.is_none() {
                bracket = Some((thetas[last], thetas[k]));
            }
        }
        last = k;
    }
    let (a, b) =
        bracket.ok_or_else(|| Error::Invalid(format!("phi does not vanish on the meridian at azimuth {azimuth}")))?;
    let theta1 = brent(phi, a, b, 1e-14)?;
    let residual = phi(theta1)?.abs();
    Ok((theta1, changes, residual))
}

/// `d_omega u(s,y,omega1) - d_omega u(t,x,omega1)` in the frame at `omega1`.
pub fn v0_at(solver: &Characteristics, pair: &PhasePair, omega1: &Vec3) -> Result<[f64; 2]> {
    let frame = TangentFrame::at(omega1);
    let d = difference_gradient(solver, pair, omega1)?;
    Ok(frame.project(&d))
}

/// Computes `m0`, `omega0`, the region and (exterior) the curve `D`.
pub fn decompose(solver: &Characteristics, pair: &PhasePair, options: &DecomposeOptions) -> Result<PhaseDecomposition> {
    if options.grid_level < 2 {
        return Err(Error::Invalid(format!(
            "omega grid level {} is below 2",
            options.grid_level
        )));
    }
    let dirs = icosahedral_directions(options.grid_level);
    let spacing = 1.2 / 2f64.powi(options.grid_level as i32);
    let values: Vec<f64> = dirs
        .par_iter()
        .map(|w| difference(solver, pair, w))
        .collect::<Result<_>>()?;
    let tol = pair.region_tolerance();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let vmax = values[best];
    let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);

    let (omega0, m0, degenerate, maximizers) = if vmax - vmin <= tol {
        let tied: Vec<[f64; 3]> = dirs
            .iter()
            .zip(&values)
            .filter(|(_, v)| **v >= vmax - tol)
            .map(|(w, _)| [w.x, w.y, w.z])
            .collect();
        (dirs[best], vmax, true, tied)
    } else {
        let neighbourhood = 1.5 * spacing;
        let mut candidates: Vec<usize> = (0..dirs.len())
            .filter(|&i| {
                (0..dirs.len())
                    .all(|k| k == i || angle_between(&dirs[i], &dirs[k]) > neighbourhood || values[i] >= values[k])
            })
            .collect();
        candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let margin = 0.05 * (vmax - vmin);
        let mut polished: Vec<Polished> = Vec::new();
        for &i in candidates.iter().filter(|&&i| values[i] >= vmax - margin) {
            polished.push(polish(solver, pair, dirs[i], spacing)?);
        }
        polished.sort_by(|a, b| b.value.total_cmp(&a.value));
        let top = &polished[0];
        for other in &polished[1..] {
            if top.value - other.value <= tol && angle_between(&top.omega, &other.omega) > 0.1 {
                return Err(Error::AmbiguousMaximizer {
                    first: top.omega.into(),
                    second: other.omega.into(),
                    value: top.value,
                });
            }
        }
        (top.omega, top.value, top.degenerate, vec![top.omega.into()])
    };

    let region = Region::classify(m0, tol);
    let mut decomposition = PhaseDecomposition {
        pair: *pair,
        m0,
        omega0: omega0.into(),
        region,
        tol_region: tol,
        degenerate,
        maximizers,
        theta1_curve: None,
        omega1: None,
        v0: None,
    };
    if region == Region::Exterior {
        let axis = decomposition.axis();
        let azimuths: Vec<f64> = (0..options.azimuths)
            .map(|k| TAU * k as f64 / options.azimuths as f64)
            .collect();
        let found: Vec<(f64, usize, f64)> = azimuths
            .par_iter()
            .map(|&az| find_theta1(solver, pair, &axis, m0, az, options.meridian_samples))
            .collect::<Result<_>>()?;
        let omega1 = axis.direction(found[0].0, 0.0);
        decomposition.v0 = Some(v0_at(solver, pair, &omega1)?);
        decomposition.omega1 = Some(omega1.into());
        decomposition.theta1_curve = Some(Theta1Curve {
            azimuths,
            theta1: found.iter().map(|f| f.0).collect(),
            sign_changes: found.iter().map(|f| f.1).collect(),
            residuals: found.iter().map(|f| f.2).collect(),
        });
    }
    Ok(decomposition)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Mu,
    Eta,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CurveSample {
    pub sigma: f64,
    pub point: SpacetimePoint,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConnectingCurve {
    pub kind: CurveKind,
    /// `a` (mu) or `a1` (eta) at the start of the curve.
    pub coefficient: [f64; 2],
    pub samples: Vec<CurveSample>,
    pub endpoint_defect: f64,
    /// Mu: `max |u(mu(s)) - u(mu(0)) - s|`; eta: `max |u(eta(s)) - u(eta(0))|`.
    pub u_defect: f64,
    /// Mu: drift of `d_omega u`; eta: deviation from the affine law with slope `v0`.
    pub domega_defect: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CurveOptions {
    pub tolerance: f64,
    pub max_condition: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            tolerance: 1e-8,
            max_condition: 1e6,
        }
    }
}

impl CurveOptions {
    pub fn budget(&self) -> f64 {
        10.0 * self.tolerance
    }
}

fn gram_inverse(gram: &Matrix2<f64>, max_condition: f64) -> Result<Matrix2<f64>> {
    let eig = SymmetricEigen::new(*gram).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > max_condition {
        return Err(Error::GramSingular { condition });
    }
    Ok(gram.try_inverse().expect("well-conditioned Gram matrix"))
}

struct CurveRun {
    coefficient: [f64; 2],
    samples: Vec<CurveSample>,
    end: Vec3,
}

/// Integrates a curve in the slice `s` whose velocity is built from the
/// optical data at `omega` and the inverse Gram matrix.
fn run_curve<F>(
    solver: &Characteristics,
    s: f64,
    start: Vec3,
    omega: &Vec3,
    sigma_end: f64,
    options: &CurveOptions,
    field: F,
) -> Result<CurveRun>
where
    F: Fn(&OpticalPoint, &Matrix2<f64>) -> (Vec3, Vector2<f64>),
{
    let velocity = |y: &SVector<f64, 3>| -> Result<(Vec3, Vector2<f64>)> {
        let x = Vec3::new(y[0], y[1], y[2]);
        let p = solver.evaluate(s, &x, omega, Level::Full)?;
        let inv = gram_inverse(&p.full().gram, options.max_condition)?;
        Ok(field(&p, &inv))
    };
    let y0 = SVector::<f64, 3>::new(start.x, start.y, start.z);
    let (_, coefficient) = velocity(&y0)?;
    if sigma_end.abs() <= 1e-12 {
        return Ok(CurveRun {
            coefficient: [coefficient[0], coefficient[1]],
            samples: vec![CurveSample {
                sigma: 0.0,
                point: SpacetimePoint::new(s, start),
            }],
            end: start,
        });
    }
    let rhs = |_sigma: f64, y: &SVector<f64, 3>| -> Result<SVector<f64, 3>> { Ok(velocity(y)?.0) };
    let traj = Dopri5::with_tolerance(options.tolerance).integrate(rhs, 0.0, y0, sigma_end)?;
    let samples = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&sigma, y)| CurveSample {
            sigma,
            point: SpacetimePoint::new(s, Vec3::new(y[0], y[1], y[2])),
        })
        .collect();
    let end = traj.last();
    Ok(CurveRun {
        coefficient: [coefficient[0], coefficient[1]],
        samples,
        end: Vec3::new(end[0], end[1], end[2]),
    })
}

fn check_endpoint(curve: ConnectingCurve, options: &CurveOptions) -> Result<ConnectingCurve> {
    if curve.endpoint_defect > options.budget() {
        return Err(Error::EndpointDefect {
            defect: curve.endpoint_defect,
            budget: options.budget(),
        });
    }
    Ok(curve)
}

fn tangential(p: &OpticalPoint, coefficient: &Vector2<f64>) -> Vec3 {
    let d = p.full();
    d.domega_n[0] * coefficient[0] + d.domega_n[1] * coefficient[1]
}

/// Integrates `mu' = b N + a . d_omega N`, `a = g(d_omega N, d_omega N)^-1 d_omega b`,
/// at `omega0` in the slice `s` from `gamma_{omega0}(s - t)` over `sigma in [0, m0]`,
/// and checks `u(mu(sigma)) = u(mu(0)) + sigma`, `d_omega u(mu(sigma)) = const`.
pub fn integrate_mu(
    solver: &Characteristics,
    pair: &PhasePair,
    decomposition: &PhaseDecomposition,
    options: &CurveOptions,
) -> Result<ConnectingCurve> {
    if decomposition.region == Region::Exterior {
        return Err(Error::Invalid("mu connects points of S or A_int".into()));
    }
    let omega0 = decomposition.omega0();
    let s = pair.to.t;
    let start = solver.transport(pair.from.t, &pair.from.space(), &omega0, s)?;
    let run = run_curve(solver, s, start, &omega0, decomposition.m0, options, |p, inv| {
        let d = p.full();
        let a = inv * Vector2::new(d.domega_b[0], d.domega_b[1]);
        (p.normal * p.b + tangential(p, &a), a)
    })?;
    let base = solver.evaluate(s, &start, &omega0, Level::Value)?;
    let mut u_defect = 0.0f64;
    let mut domega_defect = 0.0f64;
    for sample in &run.samples {
        let p = solver.evaluate(s, &sample.point.space(), &omega0, Level::Value)?;
        u_defect = u_defect.max((p.u - base.u - sample.sigma).abs());
        for a in 0..2 {
            domega_defect = domega_defect.max((p.domega_u[a] - base.domega_u[a]).abs());
        }
    }
    check_endpoint(
        ConnectingCurve {
            kind: CurveKind::Mu,
            coefficient: run.coefficient,
            endpoint_defect: (run.end - pair.to.space()).norm(),
            samples: run.samples,
            u_defect,
            domega_defect,
        },
        options,
    )
}

/// Integrates `eta' = b a1 . d_omega N`, `a1 = g(d_omega N, d_omega N)^-1 v0`, at
/// `omega1` in the slice `s` from `gamma_{omega1}(s - t)` over `sigma in [0, 1]`,
/// and checks `u(eta(sigma)) = const`, `d_omega u(eta(sigma)) = d_omega u(eta(0)) + sigma v0`.
pub fn integrate_eta(
    solver: &Characteristics,
    pair: &PhasePair,
    decomposition: &PhaseDecomposition,
    omega1: &Vec3,
    options: &CurveOptions,
) -> Result<ConnectingCurve> {
    if decomposition.region != Region::Exterior {
        return Err(Error::Invalid("eta connects points of A_ext".into()));
    }
    let omega1 = omega1.normalize();
    let s = pair.to.t;
    let v0 = v0_at(solver, pair, &omega1)?;
    let v0 = Vector2::new(v0[0], v0[1]);
    let start = solver.transport(pair.from.t, &pair.from.space(), &omega1, s)?;
    let run = run_curve(solver, s, start, &omega1, 1.0, options, |p, inv| {
        let a1 = inv * v0;
        (tangential(p, &a1) * p.b, a1)
    })?;
    let base = solver.evaluate(s, &start, &omega1, Level::Value)?;
    let mut u_defect = 0.0f64;
    let mut domega_defect = 0.0f64;
    for sample in &run.samples {
        let p = solver.evaluate(s, &sample.point.space(), &omega1, Level::Value)?;
        u_defect = u_defect.max((p.u - base.u).abs());
        for a in 0..2 {
            let affine = base.domega_u[a] + sample.sigma * v0[a];
            domega_defect = domega_defect.max((p.domega_u[a] - affine).abs());
        }
    }
    check_endpoint(
        ConnectingCurve {
            kind: CurveKind::Eta,
            coefficient: run.coefficient,
            endpoint_defect: (run.end - pair.to.space()).norm(),
            samples: run.samples,
            u_defect,
            domega_defect,
        },
        options,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LemmaCase {
    OnS,
    Interior,
    ExtFar,
    ExtNear,
}

impl LemmaCase {
    pub fn label(&self) -> &'static str {
        match self {
            LemmaCase::OnS => "on_s",
            LemmaCase::Interior => "interior",
            LemmaCase::ExtFar => "ext_far",
            LemmaCase::ExtNear => "ext_near",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct KeyLemmaSample {
    pub omega: [f64; 3],
    pub theta: f64,
    pub theta1: Option<f64>,
    pub omega1: Option<[f64; 3]>,
    /// Angle between the lines spanned by `v0` and `omega1 - omega`.
    pub alpha: Option<f64>,
    pub phi_value: f64,
    pub bound_value: f64,
    /// `|phi| / (sqrt((1 - cos(theta - theta1)) / (1 - cos theta1)) m0)` in the near exterior case.
    pub case4_ratio: Option<f64>,
    pub case: LemmaCase,
}

impl KeyLemmaSample {
    pub fn margin(&self) -> f64 {
        self.phi_value.abs() - self.bound_value
    }
}

/// Lower bound samples at the given directions. `case4_constant` multiplies
/// the near-exterior bound (the lemma states it up to a constant).
pub fn key_lemma_samples(
    solver: &Characteristics,
    decomposition: &PhaseDecomposition,
    omegas: &[Vec3],
    case4_constant: f64,
) -> Result<Vec<KeyLemmaSample>> {
    let pair = &decomposition.pair;
    let gap = pair.gap();
    let omega0 = decomposition.omega0();
    let axis = decomposition.axis();
    omegas
        .par_iter()
        .map(|w| {
            let w = w.normalize();
            let phi = phase(solver, pair, &w)?;
            let (theta, azimuth) = axis.angles(&w);
            let mut sample = KeyLemmaSample {
                omega: w.into(),
                theta,
                theta1: None,
                omega1: None,
                alpha: None,
                phi_value: phi,
                bound_value: 0.0,
                case4_ratio: None,
                case: LemmaCase::OnS,
            };
            match decomposition.region {
                Region::OnS => {
                    sample.bound_value = 0.25 * gap * (w - omega0).norm_squared();
                }
                Region::Interior => {
                    sample.case = LemmaCase::Interior;
                    sample.bound_value = decomposition
                        .maximizers
                        .iter()
                        .map(|m| 0.125 * gap * (w - Vec3::from(*m)).norm_squared())
                        .fold(0.0, f64::max);
                }
                Region::Exterior => {
                    let (theta1, _, _) = find_theta1(solver, pair, &axis, decomposition.m0, azimuth, 48)?;
                    let omega1 = axis.direction(theta1, azimuth);
                    let v0 = TangentFrame::at(&omega1).lift(v0_at(solver, pair, &omega1)?);
                    let chord = omega1 - w;
                    if chord.norm() > 1e-12 && v0.norm() > 0.0 {
                        let c = (v0.dot(&chord) / (v0.norm() * chord.norm())).abs().min(1.0);
                        sample.alpha = Some(c.acos());
                    }
                    sample.theta1 = Some(theta1);
                    sample.omega1 = Some(omega1.into());
                    if theta >= theta1 {
                        sample.case = LemmaCase::ExtFar;
                        sample.bound_value = 0.25 * gap * (w - omega1).norm_squared();
                    } else {
                        sample.case = LemmaCase::ExtNear;
                        let shape = ((1.0 - (theta - theta1).cos()) / (1.0 - theta1.cos())).sqrt();
                        let unit = shape * decomposition.m0;
                        sample.case4_ratio = Some(phi.abs() / unit);
                        sample.bound_value = case4_constant * unit;
                    }
                }
            }
            Ok(sample)
        })
        .collect()
}

/// As [`key_lemma_samples`], failing on the first sample with
/// `|phi| < bound - 1e-8 (s - t)`.
pub fn check_key_lemma(
    solver: &Characteristics,
    decomposition: &PhaseDecomposition,
    omegas: &[Vec3],
    case4_constant: f64,
) -> Result<Vec<KeyLemmaSample>> {
    let samples = key_lemma_samples(solver, decomposition, omegas, case4_constant)?;
    let tol = 1e-8 * decomposition.pair.gap();
    if let Some(bad) = samples.iter().find(|s| s.margin() < -tol) {
        return Err(Error::BoundViolation {
            omega: bad.omega,
            phi: bad.phi_value.abs(),
            bound: bad.bound_value,
            case: bad.case.label().into(),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{make_metric, MetricSpec};

    fn flat() -> Characteristics {
        Characteristics::new(&make_metric(&MetricSpec::minkowski()).unwrap())
    }

    fn pair(t: f64, x: Vec3, s: f64, y: Vec3) -> PhasePair {
        PhasePair::new(SpacetimePoint::new(t, x), SpacetimePoint::new(s, y)).unwrap()
    }

    #[test]
    fn flat_phase_values() {
        let solver = flat();
        let p = pair(0.0, Vec3::zeros(), 1.0, Vec3::zeros());
        for w in icosahedral_directions(0) {
            assert!((phase(&solver, &p, &w).unwrap() - 1.0).abs() < 1e-14);
        }
        assert!(PhasePair::new(
            SpacetimePoint::new(0.5, Vec3::zeros()),
            SpacetimePoint::new(0.5, Vec3::zeros())
        )
        .is_err());
    }

    #[test]
    fn flat_on_cone() {
        let solver = flat();
        let w0 = Vec3::new(0.3, -0.4, 0.5).normalize();
        let x = Vec3::new(0.1, 0.2, -0.1);
        let p = pair(0.2, x, 0.7, x + w0 * 0.5);
        let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
        assert_eq!(d.region, Region::OnS);
        assert!(d.m0.abs() < 1e-12);
        assert!((d.omega0() - w0).norm() < 1e-7);
        assert!(!d.degenerate);
    }

    #[test]
    fn flat_exterior_theta1_is_pi_over_3() {
        let solver = flat();
        let w0 = Vec3::new(-0.2, 0.7, 0.1).normalize();
        let x = Vec3::new(0.1, 0.0, 0.3);
        let p = pair(0.1, x, 0.6, x + w0 * 1.0);
        let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
        assert_eq!(d.region, Region::Exterior);
        assert!((d.m0 - 0.5).abs() < 1e-12);
        let curve = d.theta1_curve.as_ref().unwrap();
        for (th, n) in curve.theta1.iter().zip(&curve.sign_changes) {
            assert!((th - PI / 3.0).abs() < 1e-7, "{th}");
            assert_eq!(*n, 1);
        }
    }

    #[test]
    fn flat_interior_degenerate() {
        let solver = flat();
        let x = Vec3::new(0.1, 0.0, 0.3);
        let p = pair(0.1, x, 0.6, x);
        let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
        assert_eq!(d.region, Region::Interior);
        assert!(d.degenerate);
        assert_eq!(d.maximizers.len(), 162);
        assert!((d.m0 + 0.5).abs() < 1e-14);
    }

    #[test]
    fn grid_level_below_two_is_rejected() {
        let solver = flat();
        let p = pair(0.0, Vec3::zeros(), 0.5, Vec3::x());
        let opts = DecomposeOptions {
            grid_level: 1,
            ..Default::default()
        };
        assert!(decompose(&solver, &p, &opts).is_err());
    }
}
