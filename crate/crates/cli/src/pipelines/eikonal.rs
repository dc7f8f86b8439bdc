//! Eikonal identity suite: geodesic constancy, residuals, frame identities
//! and the regularity constants over an epsilon sweep.

use rayon::prelude::*;
use roughwave::eikonal::{shoot_null_geodesic, verify_regularity, Characteristics, Level, RegularityReport};
use roughwave::sphere::icosahedral_directions;
use roughwave::{make_metric, MetricKind, MetricSpec, SpacetimeGrid, SpacetimePoint, Vec3};
use serde::Serialize;

use crate::config::Validated;
use crate::error::{CliResult, StageContext};
use crate::report::{csv_bytes, Check, Outcome};

const TOL: f64 = 1e-6;
const NULL_TOL: f64 = 1e-8;

#[derive(Serialize)]
struct GeodesicRow {
    base: usize,
    direction: usize,
    omega0: f64,
    omega1: f64,
    omega2: f64,
    samples: usize,
    null_defect: f64,
    u_defect: f64,
    domega_u_defect: f64,
}

#[derive(Serialize)]
struct RegularityRow {
    epsilon: f64,
    sup_b_minus_1: f64,
    sup_domega_b: f64,
    sup_gram_deviation: f64,
    sup_orthogonality: f64,
    ad1_lo: f64,
    ad1_hi: f64,
    max_deviation: f64,
    constant: f64,
}

fn geodesic_row(
    solver: &Characteristics,
    base: &SpacetimePoint,
    (b, d): (usize, usize),
    omega: &Vec3,
) -> roughwave::Result<GeodesicRow> {
    let geodesic = shoot_null_geodesic(solver.metric(), base, omega, 1.0 - base.t)?;
    let start = solver.evaluate(base.t, &base.space(), omega, Level::Value)?;
    let mut u_defect = 0.0f64;
    let mut domega_u_defect = 0.0f64;
    for sample in &geodesic.samples {
        let p = solver.evaluate(sample.point.t, &sample.point.space(), omega, Level::Value)?;
        u_defect = u_defect.max((p.u - start.u).abs());
        for a in 0..2 {
            domega_u_defect = domega_u_defect.max((p.domega_u[a] - start.domega_u[a]).abs());
        }
    }
    Ok(GeodesicRow {
        base: b,
        direction: d,
        omega0: omega.x,
        omega1: omega.y,
        omega2: omega.z,
        samples: geodesic.samples.len(),
        null_defect: geodesic.max_null_defect(),
        u_defect,
        domega_u_defect,
    })
}

fn regularity_at(
    spec: &MetricSpec,
    epsilon: f64,
    omegas: &[Vec3],
    points: &[SpacetimePoint],
) -> CliResult<RegularityReport> {
    let spec = MetricSpec {
        kind: MetricKind::Perturbed,
        epsilon,
        ..spec.clone()
    };
    let metric = make_metric(&spec).stage("metric")?;
    verify_regularity(&Characteristics::new(&metric), omegas, points).stage("verify_regularity")
}

pub fn run(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let section = &v.config.eikonal;
    let metric = &v.metric;
    let solver = Characteristics::new(metric);
    let omegas = icosahedral_directions(section.omega_grid_level);

    let jobs: Vec<(usize, usize)> = (0..section.geodesic_bases.len())
        .flat_map(|b| (0..omegas.len()).map(move |d| (b, d)))
        .collect();
    let rows: Vec<GeodesicRow> = out.timings.time("geodesics", || {
        jobs.par_iter()
            .map(|&(b, d)| {
                let [t, x, y, z] = section.geodesic_bases[b];
                geodesic_row(&solver, &SpacetimePoint::new(t, Vec3::new(x, y, z)), (b, d), &omegas[d])
            })
            .collect::<roughwave::Result<Vec<_>>>()
            .stage("geodesics")
    })?;
    let worst = |f: fn(&GeodesicRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    out.check(Check::at_most(
        "eikonal.null_defect",
        worst(|r| r.null_defect.abs()),
        NULL_TOL,
    ));
    out.check(Check::at_most("eikonal.u_constancy", worst(|r| r.u_defect), TOL));
    out.check(Check::at_most(
        "eikonal.domega_u_constancy",
        worst(|r| r.domega_u_defect),
        TOL,
    ));
    out.summarize("geodesics", rows.len());

    let grid = SpacetimeGrid::uniform(
        section.regularity_points,
        section.regularity_points,
        section.regularity_half_width,
    );
    let points = grid.points();
    let residual = out.timings.time("residual", || -> CliResult<f64> {
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| (0..omegas.len()).map(move |w| (p, w)))
            .collect();
        let defects = jobs
            .par_iter()
            .map(|&(p, w)| {
                let e = solver.evaluate(points[p].t, &points[p].space(), &omegas[w], Level::Value)?;
                Ok(e.eikonal_defect(metric).abs())
            })
            .collect::<roughwave::Result<Vec<f64>>>()
            .stage("eikonal_residual")?;
        Ok(defects.into_iter().fold(0.0, f64::max))
    })?;
    out.check(Check::at_most("eikonal.residual", residual, TOL));

    let mut epsilons = section.epsilon_sweep.clone();
    let reference = metric.epsilon();
    if reference > 0.0 && !epsilons.contains(&reference) {
        epsilons.push(reference);
    }
    let mut table = Vec::new();
    for &eps in &epsilons {
        let report = out.timings.time(&format!("regularity[{eps}]"), || {
            regularity_at(&v.config.metric, eps, &omegas, &points)
        })?;
        let dev = report.max_deviation();
        table.push(RegularityRow {
            epsilon: eps,
            sup_b_minus_1: report.sup_b_minus_1,
            sup_domega_b: report.sup_domega_b,
            sup_gram_deviation: report.sup_gram_deviation,
            sup_orthogonality: report.sup_orthogonality,
            ad1_lo: report.ad1_ratio_range[0],
            ad1_hi: report.ad1_ratio_range[1],
            max_deviation: dev,
            constant: dev / eps,
        });
    }
    let orthogonality = table.iter().map(|r| r.sup_orthogonality).fold(0.0, f64::max);
    out.check(Check::at_most("eikonal.orthogonality", orthogonality, TOL));
    if let Some(reference_row) = table.iter().find(|r| r.epsilon == reference) {
        let c = reference_row.constant;
        let spread = table.iter().map(|r| (r.constant / c - 1.0).abs()).fold(0.0, f64::max);
        out.check(
            Check::at_most("eikonal.regularity_constant_spread", spread, section.stability)
                .with_note(format!("C = {c} at epsilon = {reference}")),
        );
        out.summarize("regularity_constant", c);
    } else {
        out.warnings.push("flat metric: no regularity constant to fit".into());
    }
    let mut sorted: Vec<&RegularityRow> = table.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let monotone = sorted.windows(2).all(|w| w[1].max_deviation >= w[0].max_deviation);
    out.summarize("deviation_monotone_in_epsilon", monotone);
    out.file(
        "geodesics.csv",
        csv_bytes(
            &rows,
            &[
                "base",
                "direction",
                "omega0",
                "omega1",
                "omega2",
                "samples",
                "null_defect",
                "u_defect",
                "domega_u_defect",
            ],
        )?,
    );
    out.file(
        "regularity.csv",
        csv_bytes(
            &table,
            &[
                "epsilon",
                "sup_b_minus_1",
                "sup_domega_b",
                "sup_gram_deviation",
                "sup_orthogonality",
                "ad1_lo",
                "ad1_hi",
                "max_deviation",
                "constant",
            ],
        )?,
    );
    Ok(out)
}
