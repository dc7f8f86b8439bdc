//! Grid suites: closed-form exactness in Minkowski space and the identity
//! checks of the perturbed optical functions.

use nalgebra::Vector4;
use rand::Rng;
use roughwave::eikonal::{
    check_global_coordinates, domega_u_by_differencing, eikonal_residual_fd, solve_optical_function,
    transport_along_normal_flow, Characteristics, Level, OpticalField,
};
use roughwave::metric::{check_volume_comparison, christoffel, MetricKind};
use roughwave::parametrix::SampleSet;
use roughwave::snapshot::Snapshot;
use roughwave::sphere::TangentFrame;
use roughwave::{make_metric, MetricSpec, SpacetimeGrid, SpacetimeMetric, Vec3};
use serde::Serialize;

use super::{max_abs, rng, vec3};
use crate::config::{GridSection, Validated};
use crate::error::{CliResult, StageContext};
use crate::report::{csv_bytes, Check, Outcome};

const FLAT_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Serialize)]
struct ErrorRow {
    direction: Option<usize>,
    omega0: f64,
    omega1: f64,
    omega2: f64,
    quantity: &'static str,
    max_error: f64,
}

struct Errors {
    rows: Vec<ErrorRow>,
}

impl Errors {
    fn push(&mut self, direction: Option<usize>, omega: &Vec3, quantity: &'static str, max_error: f64) {
        self.rows.push(ErrorRow {
            direction,
            omega0: omega.x,
            omega1: omega.y,
            omega2: omega.z,
            quantity,
            max_error,
        });
    }

    /// Worst error per quantity, in first-seen order.
    fn worst(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(q, _)| *q == row.quantity) {
                Some(entry) => entry.1 = entry.1.max(row.max_error),
                None => out.push((row.quantity, row.max_error)),
            }
        }
        out
    }
}

fn grid_of(section: &GridSection) -> SpacetimeGrid {
    SpacetimeGrid::uniform(section.times, section.points, section.half_width)
}

fn snapshot_files(outcome: &mut Outcome, field: &OpticalField, stem: &str, metric: &SpacetimeMetric) -> CliResult<()> {
    let snapshot = Snapshot::from(field);
    let mut attributes = std::collections::BTreeMap::new();
    attributes.insert("metric".to_string(), format!("{:?}", metric.kind()).to_lowercase());
    attributes.insert("chart".to_string(), format!("{:?}", field.chart).to_lowercase());
    outcome.file(format!("{stem}.bin"), snapshot.to_bytes());
    outcome.json_file(&format!("{stem}.json"), &snapshot.metadata(attributes))
}

/// A subsampled cloud of the grid slice at `t = 0.5`.
fn slice_cloud(section: &GridSection) -> Vec<Vec3> {
    let axis = roughwave::grid::linspace(-0.5 * section.half_width, 0.5 * section.half_width, 5);
    let mut cloud = Vec::new();
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                cloud.push(Vec3::new(a, b, c));
            }
        }
    }
    cloud
}

pub fn run_flat(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let spec = MetricSpec {
        kind: MetricKind::Minkowski,
        domain_radius: v.config.metric.domain_radius,
        ..MetricSpec::minkowski()
    };
    let metric = make_metric(&spec).stage("metric")?;
    let section = &v.config.flat;
    let grid = grid_of(section);
    let points = grid.points();
    let mut errors = Errors { rows: Vec::new() };
    for (k, dir) in section.directions.iter().enumerate() {
        let omega = vec3(*dir).normalize();
        let field = out
            .timings
            .time(&format!("solve[{k}]"), || {
                solve_optical_function(&metric, &omega, &grid)
            })
            .stage("solve_optical_function")?;
        let frame = TangentFrame::at(&omega);
        let zip = || points.iter().enumerate();
        errors.push(
            Some(k),
            &omega,
            "u",
            max_abs(zip().map(|(i, p)| field.u[i] - (-p.t + p.space().dot(&omega)))),
        );
        errors.push(Some(k), &omega, "dt_u", max_abs(field.dt_u.iter().map(|d| d + 1.0)));
        errors.push(
            Some(k),
            &omega,
            "grad_u",
            max_abs(field.grad.iter().map(|g| (g - omega).norm())),
        );
        errors.push(
            Some(k),
            &omega,
            "domega_u",
            max_abs(zip().flat_map(|(i, p)| {
                let x = p.space();
                let d = field.domega_u[i];
                (0..2).map(move |a| d[a] - x.dot(&frame.basis(a)))
            })),
        );
        errors.push(Some(k), &omega, "b", max_abs(field.b.iter().map(|b| b - 1.0)));
        errors.push(
            Some(k),
            &omega,
            "N",
            max_abs(field.normal.iter().map(|n| (n - omega).norm())),
        );
        errors.push(
            Some(k),
            &omega,
            "L",
            max_abs(
                field
                    .l
                    .iter()
                    .map(|l| (l - Vector4::new(1.0, omega.x, omega.y, omega.z)).norm()),
            ),
        );
        errors.push(
            Some(k),
            &omega,
            "hessian_u",
            max_abs(field.hessian.iter().map(|h| h.abs().max())),
        );
        errors.push(
            Some(k),
            &omega,
            "eikonal_residual",
            max_abs(
                field
                    .dt_u
                    .iter()
                    .zip(&field.grad)
                    .map(|(d, g)| -d * d + g.norm_squared()),
            ),
        );
        let solver = Characteristics::new(&metric);
        let coords = check_global_coordinates(&solver, &omega, 0.5, &slice_cloud(section), 1e-3)
            .stage("check_global_coordinates")?;
        errors.push(
            Some(k),
            &omega,
            "coordinate_density",
            max_abs(coords.density_range.iter().map(|d| d - 1.0)),
        );
        if k == 0 {
            snapshot_files(&mut out, &field, "optical_field_flat", &metric)?;
        }
    }
    let christoffel_max = out.timings.time("christoffel", || -> CliResult<f64> {
        let mut worst = 0.0f64;
        for p in &points {
            worst = worst.max(christoffel(&metric, p).stage("christoffel")?.max_abs());
        }
        Ok(worst)
    })?;
    let none = Vec3::zeros();
    errors.push(None, &none, "christoffel", christoffel_max);
    let mut det4 = 0.0f64;
    let mut det3 = 0.0f64;
    for p in &points {
        det4 = det4.max((metric.components(p.t, &p.space()).determinant() + 1.0).abs());
        det3 = det3.max((metric.foliation(p.t, &p.space()).induced_metric.determinant() - 1.0).abs());
    }
    errors.push(None, &none, "det_g", det4);
    errors.push(None, &none, "det_slice_metric", det3);
    for (quantity, worst) in errors.worst() {
        out.check(Check::at_most(format!("flat.{quantity}"), worst, FLAT_TOL));
    }
    out.summarize("grid_points", points.len());
    out.summarize("directions", section.directions.len());
    let rows: Vec<&ErrorRow> = errors.rows.iter().collect();
    out.file(
        "flat_errors.csv",
        csv_bytes(
            &rows,
            &["direction", "omega0", "omega1", "omega2", "quantity", "max_error"],
        )?,
    );
    Ok(out)
}

#[derive(Serialize)]
struct ProbeRow {
    kind: &'static str,
    t: f64,
    x0: f64,
    x1: f64,
    x2: f64,
    direction: usize,
    error: f64,
}

pub fn run_perturbed(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let metric = &v.metric;
    if metric.is_flat() {
        out.warnings
            .push("run-perturbed with a flat metric; the checks are trivially satisfied".into());
    }
    let section = &v.config.perturbed;
    let grid = grid_of(section);
    let points = grid.points();
    let solver = Characteristics::new(metric);
    let directions: Vec<Vec3> = section.directions.iter().map(|d| vec3(*d).normalize()).collect();
    let mut residual = 0.0f64;
    let mut lapse_identity = 0.0f64;
    let mut unit_normal = 0.0f64;
    let mut null_l = 0.0f64;
    let weights = SampleSet::from_grid(&grid).weights.expect("grid samples carry weights");
    let space_len = weights.space_weights.len();
    let mut hessian_l4 = Vec::with_capacity(directions.len());
    for (k, omega) in directions.iter().enumerate() {
        let field = out
            .timings
            .time(&format!("solve[{k}]"), || solve_optical_function(metric, omega, &grid))
            .stage("solve_optical_function")?;
        for (i, p) in points.iter().enumerate() {
            let x = p.space();
            let g = metric.components(p.t, &x);
            let g_inv = g.try_inverse().expect("metric is invertible");
            let du = Vector4::new(field.dt_u[i], field.grad[i].x, field.grad[i].y, field.grad[i].z);
            residual = residual.max(du.dot(&(g_inv * du)).abs());
            let foliation = metric.foliation(p.t, &x);
            let t_u = foliation.normal.dot(&du);
            lapse_identity = lapse_identity.max((1.0 / field.b[i] + t_u).abs());
            let n = field.normal[i];
            unit_normal = unit_normal.max((n.dot(&(foliation.induced_metric * n)) - 1.0).abs());
            null_l = null_l.max(field.l[i].dot(&(g * field.l[i])).abs());
        }
        // Spacetime L^4 norm of the spatial hessian; recorded only.
        let l4: f64 = field
            .hessian
            .iter()
            .enumerate()
            .map(|(i, h)| weights.time_weights[i / space_len] * weights.space_weights[i % space_len] * h.norm().powi(4))
            .sum();
        hessian_l4.push(l4.powf(0.25));
        if k == 0 {
            snapshot_files(&mut out, &field, "optical_field_perturbed", metric)?;
        }
    }
    out.check(Check::at_most("perturbed.eikonal_residual", residual, RESIDUAL_TOL));
    out.check(Check::at_most("perturbed.lapse_identity", lapse_identity, RESIDUAL_TOL));
    out.check(Check::at_most("perturbed.unit_normal", unit_normal, RESIDUAL_TOL));
    out.check(Check::at_most("perturbed.null_l", null_l, RESIDUAL_TOL));

    let mut rng = rng(v.config.seed, 1);
    let mut rows = Vec::new();
    let probes: Vec<(f64, Vec3, usize)> = (0..section.probe_points)
        .map(|k| {
            let t = rng.random_range(0.05..1.0);
            let x = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            (t, x, k % directions.len())
        })
        .collect();
    let mut push = |kind, t: f64, x: &Vec3, direction, error: f64| {
        rows.push(ProbeRow {
            kind,
            t,
            x0: x.x,
            x1: x.y,
            x2: x.z,
            direction,
            error,
        })
    };
    out.timings.time("probes", || -> CliResult<()> {
        for &(t, x, d) in &probes {
            let omega = &directions[d];
            let fd = eikonal_residual_fd(&solver, t, &x, omega, 1e-3).stage("eikonal_residual_fd")?;
            push("fd_eikonal_residual", t, &x, d, fd);
            let (end, transported) =
                transport_along_normal_flow(&solver, omega, &x, t).stage("transport_along_normal_flow")?;
            let u = solver.u(t, &end, omega).stage("u")?;
            push("normal_flow_transport", t, &end, d, (u - transported).abs());
            let point = solver.evaluate(t, &x, omega, Level::Value).stage("evaluate")?;
            let diff = domega_u_by_differencing(&solver, t, &x, omega, 1e-4).stage("domega_u_by_differencing")?;
            let error = (0..2).map(|a| (point.domega_u[a] - diff[a]).abs()).fold(0.0, f64::max);
            push("domega_u_differencing", t, &x, d, error);
        }
        Ok(())
    })?;
    let worst = |kind: &str| {
        rows.iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.error)
            .fold(0.0, f64::max)
    };
    out.check(Check::at_most(
        "perturbed.fd_eikonal_residual",
        worst("fd_eikonal_residual"),
        RESIDUAL_TOL,
    ));
    out.check(Check::at_most(
        "perturbed.normal_flow_transport",
        worst("normal_flow_transport"),
        1e-5,
    ));
    out.check(Check::at_most(
        "perturbed.domega_u_differencing",
        worst("domega_u_differencing"),
        1e-4,
    ));

    let volume = check_volume_comparison(metric, &grid);
    out.check(Check::at_least("perturbed.min_lapse", volume.min_lapse, 0.5));
    out.check(Check::at_most("perturbed.max_lapse", volume.max_lapse, 2.0));
    let coords = check_global_coordinates(&solver, &directions[0], 0.5, &slice_cloud(section), 1e-3)
        .stage("check_global_coordinates")?;
    out.check(Check::at_least(
        "perturbed.coordinate_density_min",
        coords.density_range[0],
        0.5,
    ));
    out.check(Check::at_most(
        "perturbed.coordinate_density_max",
        coords.density_range[1],
        2.0,
    ));
    out.summarize("volume", &volume);
    out.summarize("hessian_u_l4", &hessian_l4);
    out.summarize("global_coordinates", &coords);
    out.summarize("grid_points", points.len());
    out.file(
        "perturbed_probes.csv",
        csv_bytes(&rows, &["kind", "t", "x0", "x1", "x2", "direction", "error"])?,
    );
    Ok(out)
}
