//! Optical functions `u(t, x, omega)` by the method of characteristics.
//!
//! The initial slice carries `u(0, x, omega) = x . omega`. The null
//! bicharacteristics of `H = g^{ab} p_a p_b / 2`, reparametrized by the time
//! coordinate, carry `u` unchanged and `du = p`. A point value is obtained by
//! locating the foot `x0` of the characteristic through `(t, x)` and returning
//! `x0 . omega`; omega-derivatives are transported the same way, giving
//! `d_omega u = x0 . e_a` in the tangent frame at omega.
//!
//! Derivatives of the flow map with respect to the foot and to omega are
//! central differences of replays on the frozen step mesh of the nominal
//! trajectory.

use nalgebra::{Matrix2, Matrix3, SVector, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpacetimeGrid, SpacetimePoint};
use crate::metric::{christoffel_at, foliation_from, FoliationData, SpacetimeMetric};
use crate::ode::{Dopri5, Trajectory};
use crate::sphere::{Chart, TangentFrame, Vec3};

type State = SVector<f64, 7>;

/// Foot-point Jacobians below this determinant are treated as a caustic.
const CAUSTIC_DETERMINANT: f64 = 0.05;
const DEGENERATE_GRADIENT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// u, du, d_omega u and the null frame.
    Value,
    /// Additionally the hessian of u and omega-derivatives of b and N.
    Full,
}

/// Null frame built from a spatial gradient: `b^-1 = |grad u|`, `N = b grad u`, `L = T + N`.
#[derive(Clone, Copy, Debug)]
pub struct FrameSample {
    pub b: f64,
    pub normal: Vec3,
    pub l: Vector4<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct OpticalDerivatives {
    /// `d^2 u / dx^i dx^j`.
    pub hessian: Matrix3<f64>,
    /// `d x(t) / d x0` along the characteristic.
    pub flow_jacobian: Matrix3<f64>,
    /// omega-derivatives of the spatial gradient at fixed `(t, x)`.
    pub domega_grad: [Vec3; 2],
    pub domega_b: [f64; 2],
    pub domega_n: [Vec3; 2],
    /// `g(d_a N, d_b N)`.
    pub gram: Matrix2<f64>,
    /// Spatial gradients of the two components of `d_omega u`.
    pub grad_domega_u: [Vec3; 2],
}

#[derive(Clone, Copy, Debug)]
pub struct OpticalPoint {
    pub t: f64,
    pub x: Vec3,
    pub frame: TangentFrame,
    pub u: f64,
    pub dt_u: f64,
    /// Spatial covector `d_i u`.
    pub grad: Vec3,
    pub foot: Vec3,
    pub domega_u: [f64; 2],
    pub b: f64,
    pub normal: Vec3,
    pub l: Vector4<f64>,
    /// `L' = g^{ab} d_b u`.
    pub l_prime: Vector4<f64>,
    pub foliation: FoliationData,
    pub derivatives: Option<OpticalDerivatives>,
}

impl OpticalPoint {
    pub fn full(&self) -> &OpticalDerivatives {
        self.derivatives.as_ref().expect("point was evaluated at Level::Full")
    }

    /// `g^{ab} d_a u d_b u` from the transported covector.
    pub fn eikonal_defect(&self, metric: &SpacetimeMetric) -> f64 {
        let g = metric.components(self.t, &self.x);
        let p = Vector4::new(self.dt_u, self.grad.x, self.grad.y, self.grad.z);
        let g_inv = g.try_inverse().expect("metric is invertible");
        p.dot(&(g_inv * p))
    }
}

struct FootSolve {
    foot: Vec3,
    end: State,
    steps: Vec<f64>,
}

/// Characteristic solver for the optical functions of one metric.
#[derive(Clone, Debug)]
pub struct Characteristics {
    metric: SpacetimeMetric,
    ode: Dopri5,
    foot_tolerance: f64,
    max_iterations: usize,
    fd_step: f64,
}

impl Characteristics {
    pub fn new(metric: &SpacetimeMetric) -> Self {
        Characteristics {
            metric: metric.clone(),
            ode: Dopri5 {
                h_init: 0.1,
                ..Dopri5::with_tolerance(1e-11)
            },
            foot_tolerance: 5e-13,
            max_iterations: 60,
            fd_step: 1e-4,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.ode.rtol = tol;
        self.ode.atol = tol;
        self
    }

    pub fn metric(&self) -> &SpacetimeMetric {
        &self.metric
    }

    pub fn tolerance(&self) -> f64 {
        self.ode.rtol
    }

    fn rhs(&self, t: f64, y: &State) -> Result<State> {
        let x = Vec3::new(y[0], y[1], y[2]);
        let r = self.metric.domain_radius();
        if x.iter().any(|c| c.abs() > r) {
            return Err(Error::DomainExit { t });
        }
        let (g_inv, dg_inv) = self.metric.inverse_with_gradient(t, &x);
        let p = Vector4::new(y[6], y[3], y[4], y[5]);
        let v = g_inv * p;
        let rate = v[0];
        let mut out = State::zeros();
        for i in 0..3 {
            out[i] = v[i + 1] / rate;
        }
        for (mu, d) in dg_inv.iter().enumerate() {
            let dp = -0.5 * p.dot(&(d * p)) / rate;
            if mu == 0 {
                out[6] = dp;
            } else {
                out[2 + mu] = dp;
            }
        }
        Ok(out)
    }

    /// Data on the initial slice: position `x0`, `du = (p0, omega)` on the future branch.
    fn initial_state(&self, x0: &Vec3, omega: &Vec3) -> State {
        let g = self.metric.components(0.0, x0);
        let g_inv = g.try_inverse().expect("metric is invertible");
        let cross = (1..4).map(|i| g_inv[(0, i)] * omega[i - 1]).sum::<f64>();
        let mut spatial = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                spatial += g_inv[(i + 1, k + 1)] * omega[i] * omega[k];
            }
        }
        let disc = cross * cross - g_inv[(0, 0)] * spatial;
        let p0 = (-cross + disc.sqrt()) / g_inv[(0, 0)];
        State::from_column_slice(&[x0.x, x0.y, x0.z, omega.x, omega.y, omega.z, p0])
    }

    pub fn characteristic(&self, foot: &Vec3, omega: &Vec3, t_end: f64) -> Result<Trajectory<7>> {
        self.metric.check_domain(0.0, foot)?;
        let y0 = self.initial_state(foot, omega);
        self.ode.integrate(|t, y| self.rhs(t, y), 0.0, y0, t_end)
    }

    fn replay(&self, foot: &Vec3, omega: &Vec3, steps: &[f64]) -> Result<State> {
        let y0 = self.initial_state(foot, omega);
        Dopri5::replay(|t, y| self.rhs(t, y), 0.0, y0, steps)
    }

    /// Replays on a frozen mesh and returns `(x(t), p(t))`.
    fn flow_map(&self, foot: &Vec3, omega: &Vec3, steps: &[f64]) -> Result<(Vec3, Vec3)> {
        let y = self.replay(foot, omega, steps)?;
        Ok((Vec3::new(y[0], y[1], y[2]), Vec3::new(y[3], y[4], y[5])))
    }

    fn fd_flow_jacobian(&self, foot: &Vec3, omega: &Vec3, steps: &[f64]) -> Result<Matrix3<f64>> {
        let h = self.fd_step;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut plus = *foot;
            let mut minus = *foot;
            plus[k] += h;
            minus[k] -= h;
            let xp = self.flow_map(&plus, omega, steps)?.0;
            let xm = self.flow_map(&minus, omega, steps)?.0;
            jac.set_column(k, &((xp - xm) / (2.0 * h)));
        }
        Ok(jac)
    }

    fn solve_foot(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<FootSolve> {
        self.metric.check_domain(t, x)?;
        let mut foot = x - omega * t;
        if t == 0.0 {
            return Ok(FootSolve {
                foot: *x,
                end: self.initial_state(x, omega),
                steps: Vec::new(),
            });
        }
        let caustic = |detail: String| Error::Caustic {
            t,
            x: [x.x, x.y, x.z],
            detail,
        };
        let mut chord: Option<Matrix3<f64>> = None;
        let mut previous = f64::INFINITY;
        for iteration in 0..self.max_iterations {
            let traj = self.characteristic(&foot, omega, t)?;
            let end = *traj.last();
            let residual = Vec3::new(end[0], end[1], end[2]) - x;
            let size = residual.amax();
            let stalled = size >= previous && size < 1e-10;
            if size <= self.foot_tolerance || stalled {
                return Ok(FootSolve {
                    foot,
                    end,
                    steps: traj.steps,
                });
            }
            if chord.is_none() && iteration >= 2 && size > 0.5 * previous {
                let jac = self.fd_flow_jacobian(&foot, omega, &traj.steps)?;
                let det = jac.determinant();
                if det.abs() < CAUSTIC_DETERMINANT {
                    return Err(caustic(format!("flow Jacobian determinant {det:e}")));
                }
                chord = jac.try_inverse();
            }
            foot -= match &chord {
                Some(inv) => inv * residual,
                None => residual,
            };
            previous = size;
        }
        Err(caustic(format!(
            "foot point did not converge in {} iterations",
            self.max_iterations
        )))
    }

    /// Foot of the characteristic through `(t, x)` on the initial slice.
    pub fn foot(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<Vec3> {
        Ok(self.solve_foot(t, x, omega)?.foot)
    }

    pub fn u(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<f64> {
        Ok(self.foot(t, x, omega)?.dot(omega))
    }

    /// Position at time `s` of the characteristic of `u(., omega)` through `(t, x)`.
    pub fn transport(&self, t: f64, x: &Vec3, omega: &Vec3, s: f64) -> Result<Vec3> {
        let foot = self.foot(t, x, omega)?;
        let traj = self.characteristic(&foot, omega, s)?;
        let end = traj.last();
        Ok(Vec3::new(end[0], end[1], end[2]))
    }

    pub fn evaluate(&self, t: f64, x: &Vec3, omega: &Vec3, level: Level) -> Result<OpticalPoint> {
        let omega = omega.normalize();
        let frame = TangentFrame::at(&omega);
        let solve = self.solve_foot(t, x, &omega)?;
        let grad = Vec3::new(solve.end[3], solve.end[4], solve.end[5]);
        let dt_u = solve.end[6];
        let g = self.metric.components(t, x);
        let foliation = foliation_from(&g);
        let sample = frame_from_gradient(&foliation, &grad, t, x)?;
        let g_inv = g.try_inverse().expect("metric is invertible");
        let l_prime = g_inv * Vector4::new(dt_u, grad.x, grad.y, grad.z);
        let derivatives = match level {
            Level::Value => None,
            Level::Full => Some(self.derivatives(t, x, &frame, &solve, &grad, &sample, &foliation)?),
        };
        Ok(OpticalPoint {
            t,
            x: *x,
            frame,
            u: solve.foot.dot(&omega),
            dt_u,
            grad,
            foot: solve.foot,
            domega_u: frame.project(&solve.foot),
            b: sample.b,
            normal: sample.normal,
            l: sample.l,
            l_prime,
            foliation,
            derivatives,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn derivatives(
        &self,
        t: f64,
        x: &Vec3,
        frame: &TangentFrame,
        solve: &FootSolve,
        grad: &Vec3,
        sample: &FrameSample,
        foliation: &FoliationData,
    ) -> Result<OpticalDerivatives> {
        let h = self.fd_step;
        let omega = frame.omega;
        let mut dx_dfoot = Matrix3::zeros();
        let mut dp_dfoot = Matrix3::zeros();
        for k in 0..3 {
            let mut plus = solve.foot;
            let mut minus = solve.foot;
            plus[k] += h;
            minus[k] -= h;
            let (xp, pp) = self.flow_map(&plus, &omega, &solve.steps)?;
            let (xm, pm) = self.flow_map(&minus, &omega, &solve.steps)?;
            dx_dfoot.set_column(k, &((xp - xm) / (2.0 * h)));
            dp_dfoot.set_column(k, &((pp - pm) / (2.0 * h)));
        }
        let det = dx_dfoot.determinant();
        if det.abs() < CAUSTIC_DETERMINANT {
            return Err(Error::Caustic {
                t,
                x: [x.x, x.y, x.z],
                detail: format!("flow Jacobian determinant {det:e}"),
            });
        }
        let inv = dx_dfoot.try_inverse().ok_or_else(|| Error::Caustic {
            t,
            x: [x.x, x.y, x.z],
            detail: "singular flow Jacobian".into(),
        })?;
        let hessian = dp_dfoot * inv;
        // symmetric up to differencing error
        let hessian = (hessian + hessian.transpose()) * 0.5;

        let gamma_inv = foliation.induced_inverse;
        let mut domega_grad = [Vec3::zeros(); 2];
        let mut domega_b = [0.0; 2];
        let mut domega_n = [Vec3::zeros(); 2];
        let mut grad_domega_u = [Vec3::zeros(); 2];
        // central difference along the great circle; dividing by 2 sin h keeps it exact on omega itself
        let denom = 2.0 * h.sin();
        for a in 0..2 {
            let mut step = [0.0; 2];
            step[a] = h;
            let plus = frame.exp(step);
            step[a] = -h;
            let minus = frame.exp(step);
            let (xp, pp) = self.flow_map(&solve.foot, &plus, &solve.steps)?;
            let (xm, pm) = self.flow_map(&solve.foot, &minus, &solve.steps)?;
            let dx = (xp - xm) / denom;
            let dp = (pp - pm) / denom;
            // hold (t, x) fixed: the foot moves by -inv dx
            let dgrad = dp - dp_dfoot * (inv * dx);
            let raised = gamma_inv * grad;
            let db = -sample.b.powi(3) * raised.dot(&dgrad);
            domega_grad[a] = dgrad;
            domega_b[a] = db;
            domega_n[a] = raised * db + gamma_inv * dgrad * sample.b;
            grad_domega_u[a] = inv.transpose() * frame.basis(a);
        }
        let gamma = foliation.induced_metric;
        let gram = Matrix2::from_fn(|a, c| domega_n[a].dot(&(gamma * domega_n[c])));
        Ok(OpticalDerivatives {
            hessian,
            flow_jacobian: dx_dfoot,
            domega_grad,
            domega_b,
            domega_n,
            gram,
            grad_domega_u,
        })
    }
}

/// `b`, `N` and `L = T + N` from the spatial gradient of u.
pub fn frame_from_gradient(foliation: &FoliationData, grad: &Vec3, t: f64, x: &Vec3) -> Result<FrameSample> {
    let raised = foliation.induced_inverse * grad;
    let norm = raised.dot(grad).sqrt();
    if !(norm >= DEGENERATE_GRADIENT) {
        return Err(Error::DegenerateGradient {
            t,
            x: [x.x, x.y, x.z],
            norm,
        });
    }
    let b = 1.0 / norm;
    let normal = raised * b;
    let l = foliation.normal + Vector4::new(0.0, normal.x, normal.y, normal.z);
    Ok(FrameSample { b, normal, l })
}

/// Null geodesic parametrized by the time coordinate, `sigma = t - t_base`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullGeodesic {
    pub omega: [f64; 3],
    pub base: SpacetimePoint,
    pub samples: Vec<GeodesicSample>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub sigma: f64,
    pub point: SpacetimePoint,
    /// `d gamma / d sigma`, time component 1.
    pub tangent: [f64; 4],
    /// `g(gamma', gamma')`.
    pub null_defect: f64,
}

impl NullGeodesic {
    pub fn end(&self) -> &GeodesicSample {
        self.samples.last().expect("geodesic has its base sample")
    }

    pub fn max_null_defect(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.null_defect.abs()))
    }
}

/// Integrates the geodesic equation from `base` with initial direction `b^-1 L`
/// of the optical function `u(., omega)`, using the Christoffel symbols.
pub fn shoot_null_geodesic(
    metric: &SpacetimeMetric,
    base: &SpacetimePoint,
    omega: &Vec3,
    sigma_end: f64,
) -> Result<NullGeodesic> {
    shoot_with(
        &Characteristics::new(metric),
        base,
        omega,
        sigma_end,
        Dopri5::with_tolerance(1e-11),
    )
}

pub fn shoot_with(
    solver: &Characteristics,
    base: &SpacetimePoint,
    omega: &Vec3,
    sigma_end: f64,
    ode: Dopri5,
) -> Result<NullGeodesic> {
    let metric = solver.metric();
    let x = base.space();
    metric.check_domain(base.t, &x)?;
    let t_end = base.t + sigma_end;
    metric.check_domain(t_end.clamp(0.0, 1.0), &x)?;
    if !(0.0..=1.0).contains(&t_end) {
        return Err(Error::Invalid(format!("sigma_end {sigma_end} leaves [0, 1]")));
    }
    let optical = solver.evaluate(base.t, &x, omega, Level::Value)?;
    let v0 = optical.l_prime.fixed_rows::<3>(1) / optical.l_prime[0];
    let y0 = SVector::<f64, 6>::from_column_slice(&[x.x, x.y, x.z, v0.x, v0.y, v0.z]);
    let radius = metric.domain_radius();
    let rhs = |t: f64, y: &SVector<f64, 6>| -> Result<SVector<f64, 6>> {
        let pos = Vec3::new(y[0], y[1], y[2]);
        if pos.iter().any(|c| c.abs() > radius) {
            return Err(Error::DomainExit { t });
        }
        let gamma = christoffel_at(&metric.at(t, &pos));
        let v = Vector4::new(1.0, y[3], y[4], y[5]);
        let quad = |a: usize| {
            let mut s = 0.0;
            for b in 0..4 {
                for c in 0..4 {
                    s += gamma.0[a][b][c] * v[b] * v[c];
                }
            }
            s
        };
        let q0 = quad(0);
        let mut out = SVector::<f64, 6>::zeros();
        for i in 0..3 {
            out[i] = y[3 + i];
            out[3 + i] = -quad(i + 1) + q0 * y[3 + i];
        }
        Ok(out)
    };
    let traj = ode.integrate(rhs, base.t, y0, t_end)?;
    let samples = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, y)| {
            let pos = Vec3::new(y[0], y[1], y[2]);
            let v = Vector4::new(1.0, y[3], y[4], y[5]);
            let g = metric.components(t, &pos);
            GeodesicSample {
                sigma: t - base.t,
                point: SpacetimePoint::new(t, pos),
                tangent: [1.0, y[3], y[4], y[5]],
                null_defect: v.dot(&(g * v)),
            }
        })
        .collect();
    Ok(NullGeodesic {
        omega: [omega.x, omega.y, omega.z],
        base: *base,
        samples,
    })
}

/// Optical function of one direction sampled on a spacetime grid.
#[derive(Clone, Debug)]
pub struct OpticalField {
    pub omega: Vec3,
    pub epsilon: f64,
    pub chart: Chart,
    pub grid: SpacetimeGrid,
    pub u: Vec<f64>,
    pub dt_u: Vec<f64>,
    pub grad: Vec<Vec3>,
    pub domega_u: Vec<[f64; 2]>,
    pub b: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub l: Vec<Vector4<f64>>,
    pub hessian: Vec<Matrix3<f64>>,
}

impl OpticalField {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Solves `u(., ., omega)` at every grid point (points are independent).
pub fn solve_optical_function(metric: &SpacetimeMetric, omega: &Vec3, grid: &SpacetimeGrid) -> Result<OpticalField> {
    let solver = Characteristics::new(metric);
    solve_on_grid(&solver, omega, grid, Level::Full)
}

pub fn solve_on_grid(
    solver: &Characteristics,
    omega: &Vec3,
    grid: &SpacetimeGrid,
    level: Level,
) -> Result<OpticalField> {
    let omega = omega.normalize();
    let points = grid.points();
    let evaluated: Vec<OpticalPoint> = points
        .par_iter()
        .map(|p| solver.evaluate(p.t, &p.space(), &omega, level))
        .collect::<Result<_>>()?;
    Ok(OpticalField {
        omega,
        epsilon: solver.metric().epsilon(),
        chart: TangentFrame::at(&omega).chart,
        grid: grid.clone(),
        u: evaluated.iter().map(|p| p.u).collect(),
        dt_u: evaluated.iter().map(|p| p.dt_u).collect(),
        grad: evaluated.iter().map(|p| p.grad).collect(),
        domega_u: evaluated.iter().map(|p| p.domega_u).collect(),
        b: evaluated.iter().map(|p| p.b).collect(),
        normal: evaluated.iter().map(|p| p.normal).collect(),
        l: evaluated.iter().map(|p| p.l).collect(),
        hessian: evaluated
            .iter()
            .map(|p| p.derivatives.map(|d| d.hessian).unwrap_or_else(Matrix3::zeros))
            .collect(),
    })
}

/// Recomputes `(b, N, L)` from the stored gradient of a field.
pub fn compute_frame(field: &OpticalField, metric: &SpacetimeMetric) -> Result<Vec<FrameSample>> {
    field
        .grid
        .points()
        .iter()
        .zip(&field.grad)
        .map(|(p, grad)| {
            let x = p.space();
            frame_from_gradient(&metric.foliation(p.t, &x), grad, p.t, &x)
        })
        .collect()
}

/// `d_omega u` on a grid by transport from the initial slice.
pub fn transport_domega_u(metric: &SpacetimeMetric, omega: &Vec3, grid: &SpacetimeGrid) -> Result<Vec<[f64; 2]>> {
    let solver = Characteristics::new(metric);
    Ok(solve_on_grid(&solver, omega, grid, Level::Value)?.domega_u)
}

/// `d_omega u` by centered differencing of `u` along the frame directions.
pub fn domega_u_by_differencing(solver: &Characteristics, t: f64, x: &Vec3, omega: &Vec3, h: f64) -> Result<[f64; 2]> {
    let frame = TangentFrame::at(omega);
    let mut out = [0.0; 2];
    for (a, slot) in out.iter_mut().enumerate() {
        let mut step = [0.0; 2];
        step[a] = h;
        let plus = solver.u(t, x, &frame.exp(step))?;
        step[a] = -h;
        let minus = solver.u(t, x, &frame.exp(step))?;
        *slot = (plus - minus) / (2.0 * h.sin());
    }
    Ok(out)
}

/// `|g^{ab} d_a u d_b u|` with all derivatives of u taken by fourth-order
/// central differences of point values (step `h`).
pub fn eikonal_residual_fd(solver: &Characteristics, t: f64, x: &Vec3, omega: &Vec3, h: f64) -> Result<f64> {
    let stencil = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        Ok((f(-2.0 * h)? - 8.0 * f(-h)? + 8.0 * f(h)? - f(2.0 * h)?) / (12.0 * h))
    };
    let mut du = Vector4::zeros();
    du[0] = stencil(&|d| solver.u(t + d, x, omega))?;
    for i in 0..3 {
        du[i + 1] = stencil(&|d| {
            let mut y = *x;
            y[i] += d;
            solver.u(t, &y, omega)
        })?;
    }
    let g_inv = solver
        .metric()
        .components(t, x)
        .try_inverse()
        .expect("metric is invertible");
    Ok(du.dot(&(g_inv * du)).abs())
}

/// Integrates `d/dtau u = n T(u) = -n |grad u|` along the normal flow
/// `dx/dt = -beta` from `(0, start)` to time `t_end`.
///
/// Returns the end point and the transported value, to be compared with
/// `u` evaluated there.
pub fn transport_along_normal_flow(
    solver: &Characteristics,
    omega: &Vec3,
    start: &Vec3,
    t_end: f64,
) -> Result<(Vec3, f64)> {
    let rhs = |t: f64, y: &SVector<f64, 4>| -> Result<SVector<f64, 4>> {
        let x = Vec3::new(y[0], y[1], y[2]);
        let point = solver.evaluate(t, &x, omega, Level::Value)?;
        let f = &point.foliation;
        let norm = (f.induced_inverse * point.grad).dot(&point.grad).sqrt();
        Ok(SVector::<f64, 4>::new(
            -f.shift.x,
            -f.shift.y,
            -f.shift.z,
            -f.lapse * norm,
        ))
    };
    let y0 = SVector::<f64, 4>::new(start.x, start.y, start.z, start.dot(omega));
    let traj = Dopri5::with_tolerance(1e-10).integrate(rhs, 0.0, y0, t_end)?;
    let end = traj.last();
    Ok((Vec3::new(end[0], end[1], end[2]), end[3]))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RegularityReport {
    pub directions: usize,
    pub points: usize,
    pub sup_b_minus_1: f64,
    pub sup_domega_b: f64,
    pub sup_gram_deviation: f64,
    /// `sup |g(N, d_omega N)|`.
    pub sup_orthogonality: f64,
    /// Range of `|N(., w) - N(., w')|_g / |w - w'|` over pairs with `|w - w'| >= 0.1`.
    pub ad1_ratio_range: [f64; 2],
    pub ad1_pairs: usize,
}

impl RegularityReport {
    /// Largest deviation from the flat values.
    pub fn max_deviation(&self) -> f64 {
        self.sup_b_minus_1
            .max(self.sup_domega_b)
            .max(self.sup_gram_deviation)
            .max((self.ad1_ratio_range[0] - 1.0).abs())
            .max((self.ad1_ratio_range[1] - 1.0).abs())
    }
}

/// Sweeps the bounds on `b`, `d_omega b`, the Gram matrix and the
/// Lipschitz ratio of `N` in omega over directions and spacetime points.
pub fn verify_regularity(
    solver: &Characteristics,
    omegas: &[Vec3],
    points: &[SpacetimePoint],
) -> Result<RegularityReport> {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..omegas.len()).map(move |w| (p, w)))
        .collect();
    let evaluated: Vec<OpticalPoint> = jobs
        .par_iter()
        .map(|&(p, w)| solver.evaluate(points[p].t, &points[p].space(), &omegas[w], Level::Full))
        .collect::<Result<_>>()?;
    let mut report = RegularityReport {
        directions: omegas.len(),
        points: points.len(),
        sup_b_minus_1: 0.0,
        sup_domega_b: 0.0,
        sup_gram_deviation: 0.0,
        sup_orthogonality: 0.0,
        ad1_ratio_range: [f64::INFINITY, f64::NEG_INFINITY],
        ad1_pairs: 0,
    };
    for e in &evaluated {
        let d = e.full();
        let gamma = e.foliation.induced_metric;
        report.sup_b_minus_1 = report.sup_b_minus_1.max((e.b - 1.0).abs());
        report.sup_domega_b = report.sup_domega_b.max(d.domega_b[0].hypot(d.domega_b[1]));
        report.sup_gram_deviation = report.sup_gram_deviation.max((d.gram - Matrix2::identity()).norm());
        for dn in &d.domega_n {
            report.sup_orthogonality = report.sup_orthogonality.max(e.normal.dot(&(gamma * dn)).abs());
        }
    }
    let n = omegas.len();
    for p in 0..points.len() {
        let row = &evaluated[p * n..(p + 1) * n];
        let gamma = row[0].foliation.induced_metric;
        for i in 0..n {
            for k in i + 1..n {
                let dw = (omegas[i] - omegas[k]).norm();
                if dw < 0.1 {
                    continue;
                }
                let dn = row[i].normal - row[k].normal;
                let ratio = dn.dot(&(gamma * dn)).sqrt() / dw;
                report.ad1_ratio_range[0] = report.ad1_ratio_range[0].min(ratio);
                report.ad1_ratio_range[1] = report.ad1_ratio_range[1].max(ratio);
                report.ad1_pairs += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GlobalCoordinateReport {
    pub samples: usize,
    /// Range of `sqrt(det g)` of the slice metric in the coordinates `(u, d_omega u)`.
    pub density_range: [f64; 2],
    /// Smallest `|Phi(x) - Phi(x')| / |x - x'|` over sampled pairs.
    pub min_separation_ratio: f64,
}

/// Checks that `x -> (u, d_omega u)(t, x, omega)` is injective on a cloud in
/// the slice `t` and that the slice volume density in these coordinates lies
/// in `[1/2, 2]`-type bounds (reported, not asserted).
pub fn check_global_coordinates(
    solver: &Characteristics,
    omega: &Vec3,
    t: f64,
    cloud: &[Vec3],
    delta: f64,
) -> Result<GlobalCoordinateReport> {
    let evaluated: Vec<OpticalPoint> = cloud
        .par_iter()
        .map(|x| solver.evaluate(t, x, omega, Level::Full))
        .collect::<Result<_>>()?;
    let coords: Vec<Vec3> = evaluated
        .iter()
        .map(|e| Vec3::new(e.u, e.domega_u[0], e.domega_u[1]))
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in &evaluated {
        let d = e.full();
        let jac = Matrix3::from_rows(&[
            e.grad.transpose(),
            d.grad_domega_u[0].transpose(),
            d.grad_domega_u[1].transpose(),
        ]);
        let density = e.foliation.volume_density / jac.determinant().abs();
        lo = lo.min(density);
        hi = hi.max(density);
    }
    let mut min_ratio = f64::INFINITY;
    for i in 0..cloud.len() {
        for k in i + 1..cloud.len() {
            let dx = (cloud[i] - cloud[k]).norm();
            if dx < delta {
                continue;
            }
            let dphi = (coords[i] - coords[k]).norm();
            if dphi < 1e-9 * dx.max(1.0) {
                return Err(Error::CoordinateCollision {
                    first: [cloud[i].x, cloud[i].y, cloud[i].z],
                    second: [cloud[k].x, cloud[k].y, cloud[k].z],
                });
            }
            min_ratio = min_ratio.min(dphi / dx);
        }
    }
    Ok(GlobalCoordinateReport {
        samples: cloud.len(),
        density_range: [lo, hi],
        min_separation_ratio: min_ratio,
    })
}

/// Phase data needed by the oscillatory integrals: `u`, `grad u`, `hess u`.
#[derive(Clone, Copy, Debug)]
pub struct PhaseJet {
    pub u: f64,
    pub grad: Vec3,
    pub hessian: Matrix3<f64>,
}

/// Source of optical-function values for the parametrix and the kernel.
pub trait PhaseField: Sync {
    fn phase(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<f64>;

    /// `order` 1 fills the gradient, 2 also the hessian.
    fn jet(&self, t: f64, x: &Vec3, omega: &Vec3, order: u8) -> Result<PhaseJet>;

    fn is_flat(&self) -> bool;

    fn epsilon(&self) -> f64;
}

/// Closed form `u = -t + x . omega` of Minkowski space.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatPhase;

impl PhaseField for FlatPhase {
    fn phase(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<f64> {
        Ok(-t + x.dot(omega))
    }

    fn jet(&self, t: f64, x: &Vec3, omega: &Vec3, _order: u8) -> Result<PhaseJet> {
        Ok(PhaseJet {
            u: -t + x.dot(omega),
            grad: *omega,
            hessian: Matrix3::zeros(),
        })
    }

    fn is_flat(&self) -> bool {
        true
    }

    fn epsilon(&self) -> f64 {
        0.0
    }
}

impl PhaseField for Characteristics {
    fn phase(&self, t: f64, x: &Vec3, omega: &Vec3) -> Result<f64> {
        self.u(t, x, omega)
    }

    fn jet(&self, t: f64, x: &Vec3, omega: &Vec3, order: u8) -> Result<PhaseJet> {
        let level = if order >= 2 { Level::Full } else { Level::Value };
        let p = self.evaluate(t, x, omega, level)?;
        Ok(PhaseJet {
            u: p.u,
            grad: p.grad,
            hessian: p.derivatives.map(|d| d.hessian).unwrap_or_else(Matrix3::zeros),
        })
    }

    fn is_flat(&self) -> bool {
        self.metric.is_flat()
    }

    fn epsilon(&self) -> f64 {
        self.metric.epsilon()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{make_metric, MetricSpec};

    fn flat() -> Characteristics {
        Characteristics::new(&make_metric(&MetricSpec::minkowski()).unwrap())
    }

    fn perturbed(eps: f64) -> Characteristics {
        Characteristics::new(&make_metric(&MetricSpec::perturbed(eps)).unwrap())
    }

    #[test]
    fn flat_closed_forms() {
        let s = flat();
        let omega = Vec3::new(0.3, -0.5, 0.8).normalize();
        let x = Vec3::new(0.4, 1.1, -0.7);
        let p = s.evaluate(0.6, &x, &omega, Level::Full).unwrap();
        assert!((p.u - (-0.6 + x.dot(&omega))).abs() < 1e-13);
        assert!((p.b - 1.0).abs() < 1e-13);
        assert!((p.normal - omega).norm() < 1e-13);
        assert!(p.full().hessian.norm() < 1e-12);
        assert!((p.full().gram - Matrix2::identity()).norm() < 1e-10);
        let l = Vector4::new(1.0, omega.x, omega.y, omega.z);
        assert!((p.l - l).norm() < 1e-13);
    }

    #[test]
    fn flat_domega_u_at_pole() {
        let s = flat();
        let x = Vec3::new(0.7, -0.2, 0.5);
        let p = s.evaluate(0.4, &x, &Vec3::z(), Level::Value).unwrap();
        assert!((p.domega_u[0] - 0.7).abs() < 1e-13);
        assert!((p.domega_u[1] + 0.2).abs() < 1e-13);
    }

    #[test]
    fn perturbed_frame_identities() {
        let s = perturbed(0.05);
        let omega = Vec3::new(0.2, 0.9, -0.3).normalize();
        let x = Vec3::new(0.3, -0.4, 0.2);
        let p = s.evaluate(0.7, &x, &omega, Level::Full).unwrap();
        let g = s.metric().components(0.7, &x);
        assert!(p.l.dot(&(g * p.l)).abs() < 1e-9);
        assert!(p.eikonal_defect(s.metric()).abs() < 1e-9);
        // b^-1 = -T(u)
        let tu = p
            .foliation
            .normal
            .dot(&Vector4::new(p.dt_u, p.grad.x, p.grad.y, p.grad.z));
        assert!((1.0 / p.b + tu).abs() < 1e-9);
        assert!((p.l - p.l_prime * p.b).norm() < 1e-9);
        let d = p.full();
        let gamma = p.foliation.induced_metric;
        for dn in &d.domega_n {
            assert!(p.normal.dot(&(gamma * dn)).abs() < 1e-7);
        }
        assert!((p.b - 1.0).abs() > 1e-4);
    }

    #[test]
    fn domega_u_matches_differencing() {
        let s = perturbed(0.05);
        let omega = Vec3::new(-0.6, 0.2, 0.5).normalize();
        let x = Vec3::new(-0.2, 0.5, 0.1);
        let p = s.evaluate(0.8, &x, &omega, Level::Value).unwrap();
        let fd = domega_u_by_differencing(&s, 0.8, &x, &omega, 1e-3).unwrap();
        for a in 0..2 {
            assert!(
                (p.domega_u[a] - fd[a]).abs() < 1e-6,
                "{a}: {} vs {}",
                p.domega_u[a],
                fd[a]
            );
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let s = perturbed(0.08);
        let omega = Vec3::new(0.5, 0.5, 0.7).normalize();
        let x = Vec3::new(0.1, -0.3, 0.4);
        let p = s.evaluate(0.9, &x, &omega, Level::Full).unwrap();
        let h = 1e-3;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let gp = s.evaluate(0.9, &xp, &omega, Level::Value).unwrap().grad;
            let gm = s.evaluate(0.9, &xm, &omega, Level::Value).unwrap().grad;
            let col = (gp - gm) / (2.0 * h);
            assert!((col - p.full().hessian.column(k)).norm() < 1e-6);
        }
        assert!(p.full().hessian.norm() > 1e-3);
    }

    #[test]
    fn out_of_domain_and_domain_exit() {
        let s = flat();
        let err = s.u(0.5, &Vec3::new(5.0, 0.0, 0.0), &Vec3::x()).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
        let err = s.u(1.0, &Vec3::new(-3.5, 0.0, 0.0), &Vec3::x()).unwrap_err();
        assert!(
            matches!(err, Error::OutOfDomain { .. } | Error::DomainExit { .. }),
            "{err}"
        );
    }

    #[test]
    fn flat_geodesic_is_a_line() {
        let m = make_metric(&MetricSpec::minkowski()).unwrap();
        let x0 = Vec3::new(0.1, 0.2, 0.3);
        let g = shoot_null_geodesic(&m, &SpacetimePoint::new(0.0, x0), &Vec3::x(), 1.0).unwrap();
        let end = g.end();
        assert!((end.point.space() - (x0 + Vec3::x())).norm() < 1e-13);
        assert_eq!(end.tangent, [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.max_null_defect(), 0.0);
    }
}
