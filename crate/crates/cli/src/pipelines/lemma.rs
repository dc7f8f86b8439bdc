//! Connecting-curve endpoint identities and the key-lemma lower bounds on
//! random or user-supplied pairs.

use rand::Rng;
use rayon::prelude::*;
use roughwave::eikonal::Characteristics;
use roughwave::phase_geometry::{
    decompose, integrate_eta, integrate_mu, key_lemma_samples, CurveOptions, DecomposeOptions, KeyLemmaSample,
    LemmaCase, PhasePair, Region,
};
use roughwave::sphere::icosahedral_directions;
use roughwave::{make_metric, MetricSpec, SpacetimeMetric, SpacetimePoint, Vec3};
use serde::Serialize;

use super::rng;
use crate::config::{PairRecord, Validated};
use crate::error::{CliResult, StageContext};
use crate::report::{csv_bytes, Check, Outcome};

const CURVE_TOL: f64 = 1e-6;
const CLOSED_FORM_TOL: f64 = 1e-10;

/// How a random pair is placed relative to the cone of its base point.
#[derive(Clone, Copy, Debug)]
enum Placement {
    File(PairRecord),
    /// `y` on the cone along `direction`.
    OnCone {
        t: f64,
        x: Vec3,
        s: f64,
        direction: Vec3,
    },
    /// `y = x + rho (s - t) direction`.
    Radial {
        t: f64,
        x: Vec3,
        s: f64,
        direction: Vec3,
        rho: f64,
    },
}

impl Placement {
    fn realize(&self, solver: &Characteristics) -> roughwave::Result<PhasePair> {
        match *self {
            Placement::File(r) => PhasePair::new(
                SpacetimePoint::new(r.t, Vec3::new(r.x0, r.x1, r.x2)),
                SpacetimePoint::new(r.s, Vec3::new(r.y0, r.y1, r.y2)),
            ),
            Placement::OnCone { t, x, s, direction } => {
                let y = solver.transport(t, &x, &direction, s)?;
                PhasePair::new(SpacetimePoint::new(t, x), SpacetimePoint::new(s, y))
            }
            Placement::Radial {
                t,
                x,
                s,
                direction,
                rho,
            } => PhasePair::new(
                SpacetimePoint::new(t, x),
                SpacetimePoint::new(s, x + direction * (rho * (s - t))),
            ),
        }
    }
}

fn random_placements(seed: u64, count: usize) -> Vec<Placement> {
    let mut rng = rng(seed, 2);
    (0..count)
        .map(|k| {
            let t = rng.random_range(0.0..0.4);
            let s = t + rng.random_range(0.25..0.5);
            let x = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let direction = loop {
                let w = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = w.norm();
                if n > 0.1 && n <= 1.0 {
                    break w / n;
                }
            };
            match k % 3 {
                0 => Placement::OnCone { t, x, s, direction },
                1 => Placement::Radial {
                    t,
                    x,
                    s,
                    direction,
                    rho: rng.random_range(0.25..0.75),
                },
                _ => Placement::Radial {
                    t,
                    x,
                    s,
                    direction,
                    rho: rng.random_range(1.3..2.0),
                },
            }
        })
        .collect()
}

#[derive(Serialize)]
struct PairRow {
    metric: String,
    pair: usize,
    t: f64,
    x0: f64,
    x1: f64,
    x2: f64,
    s: f64,
    y0: f64,
    y1: f64,
    y2: f64,
    region: String,
    m0: f64,
    curve: String,
    endpoint_defect: f64,
    u_defect: f64,
    domega_defect: f64,
    error: String,
}

#[derive(Serialize)]
struct SampleRow {
    metric: String,
    pair: usize,
    case: &'static str,
    omega0: f64,
    omega1: f64,
    omega2: f64,
    theta: f64,
    phi: f64,
    bound: f64,
    margin: f64,
    case4_ratio: Option<f64>,
    closed_form_error: Option<f64>,
}

struct PairResult {
    row: PairRow,
    gap: f64,
    samples: Vec<KeyLemmaSample>,
    omega0: Vec3,
}

fn evaluate_pair(
    solver: &Characteristics,
    label: &str,
    index: usize,
    placement: &Placement,
    omegas: &[Vec3],
) -> PairResult {
    let row = PairRow {
        metric: label.to_string(),
        pair: index,
        t: f64::NAN,
        x0: f64::NAN,
        x1: f64::NAN,
        x2: f64::NAN,
        s: f64::NAN,
        y0: f64::NAN,
        y1: f64::NAN,
        y2: f64::NAN,
        region: String::new(),
        m0: f64::NAN,
        curve: String::new(),
        endpoint_defect: f64::NAN,
        u_defect: f64::NAN,
        domega_defect: f64::NAN,
        error: String::new(),
    };
    let mut result = PairResult {
        row,
        gap: 0.0,
        samples: Vec::new(),
        omega0: Vec3::zeros(),
    };
    let outcome = (|| -> roughwave::Result<()> {
        let pair = placement.realize(solver)?;
        let row = &mut result.row;
        (row.t, row.x0, row.x1, row.x2) = (pair.from.t, pair.from.x[0], pair.from.x[1], pair.from.x[2]);
        (row.s, row.y0, row.y1, row.y2) = (pair.to.t, pair.to.x[0], pair.to.x[1], pair.to.x[2]);
        result.gap = pair.gap();
        let dec = decompose(solver, &pair, &DecomposeOptions::default())?;
        row.region = dec.region.label().to_string();
        row.m0 = dec.m0;
        result.omega0 = dec.omega0();
        let options = CurveOptions::default();
        let curve = match dec.region {
            Region::OnS => None,
            Region::Interior => Some(integrate_mu(solver, &pair, &dec, &options)?),
            Region::Exterior => {
                let omega1 = Vec3::from(dec.omega1.expect("exterior decompositions carry omega1"));
                Some(integrate_eta(solver, &pair, &dec, &omega1, &options)?)
            }
        };
        if let Some(c) = curve {
            row.curve = format!("{:?}", c.kind).to_lowercase();
            row.endpoint_defect = c.endpoint_defect;
            row.u_defect = c.u_defect;
            row.domega_defect = c.domega_defect;
        }
        result.samples = key_lemma_samples(solver, &dec, omegas, 0.0)?;
        Ok(())
    })();
    if let Err(e) = outcome {
        result.row.error = e.to_string();
    }
    result
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

pub fn run(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let section = &v.config.lemma;
    let placements: Vec<Placement> = match &v.pairs {
        Some(records) => records.iter().map(|r| Placement::File(*r)).collect(),
        None => random_placements(v.config.seed, section.pairs),
    };
    if placements.is_empty() {
        out.warnings.push("no pairs to verify; wrote empty tables".into());
    }
    let mut metrics: Vec<(String, SpacetimeMetric)> = Vec::new();
    if section.include_flat || v.metric.is_flat() {
        let spec = MetricSpec {
            domain_radius: v.config.metric.domain_radius,
            ..MetricSpec::minkowski()
        };
        metrics.push(("flat".into(), make_metric(&spec).stage("metric")?));
    }
    if !v.metric.is_flat() {
        metrics.push(("perturbed".into(), v.metric.clone()));
    }
    let omegas = icosahedral_directions(section.omega_grid_level);

    let mut pair_rows = Vec::new();
    let mut sample_rows = Vec::new();
    let mut fitted: Option<f64> = None;
    for (label, metric) in &metrics {
        let solver = Characteristics::new(metric);
        let results: Vec<PairResult> = out.timings.time(&format!("pairs[{label}]"), || {
            placements
                .par_iter()
                .enumerate()
                .map(|(k, p)| evaluate_pair(&solver, label, k, p, &omegas))
                .collect()
        });
        let flat = metric.is_flat();
        let ratios = || {
            results
                .iter()
                .flat_map(|r| r.samples.iter())
                .filter_map(|s| s.case4_ratio)
        };
        let min_ratio = ratios().fold(f64::INFINITY, f64::min);
        if flat && min_ratio.is_finite() {
            fitted = Some(min_ratio);
        }
        let case4 = if flat { fitted } else { fitted.map(|c| 0.5 * c) };
        let mut violations = 0usize;
        let mut closed_form = 0.0f64;
        let mut counts = std::collections::BTreeMap::new();
        for r in &results {
            let tol = 1e-8 * r.gap;
            for s in &r.samples {
                *counts.entry(s.case.label()).or_insert(0usize) += 1;
                let bound = match s.case {
                    LemmaCase::ExtNear => case4.map(|c| c * s.phi_value.abs() / s.case4_ratio.unwrap_or(f64::NAN)),
                    _ => Some(s.bound_value),
                };
                let margin = bound.map(|b| s.phi_value.abs() - b);
                if s.case != LemmaCase::ExtNear && margin.is_some_and(|m| m < -tol) {
                    violations += 1;
                }
                let closed_form_error = (flat && s.case == LemmaCase::OnS).then(|| {
                    let w = Vec3::from(s.omega);
                    (s.phi_value.abs() - 0.5 * r.gap * (w - r.omega0).norm_squared()).abs()
                });
                if let Some(e) = closed_form_error {
                    closed_form = closed_form.max(e);
                }
                sample_rows.push(SampleRow {
                    metric: label.clone(),
                    pair: r.row.pair,
                    case: s.case.label(),
                    omega0: s.omega[0],
                    omega1: s.omega[1],
                    omega2: s.omega[2],
                    theta: s.theta,
                    phi: s.phi_value,
                    bound: bound.unwrap_or(f64::NAN),
                    margin: margin.unwrap_or(f64::NAN),
                    case4_ratio: s.case4_ratio,
                    closed_form_error,
                });
            }
        }
        let curves = || results.iter().filter(|r| !r.row.curve.is_empty());
        let failures = results.iter().filter(|r| !r.row.error.is_empty()).count();
        for r in results.iter().filter(|r| !r.row.error.is_empty()) {
            out.warnings
                .push(format!("{label} pair {}: {}", r.row.pair, r.row.error));
        }
        let p = |name: &str| format!("lemma.{label}.{name}");
        out.check(Check::at_most(p("failed_pairs"), failures as f64, 0.0));
        if !placements.is_empty() {
            out.check(Check::at_most(
                p("endpoint_defect"),
                max_of(curves().map(|r| r.row.endpoint_defect)),
                CURVE_TOL,
            ));
            out.check(Check::at_most(
                p("curve_u_defect"),
                max_of(curves().map(|r| r.row.u_defect)),
                CURVE_TOL,
            ));
            out.check(Check::at_most(
                p("eta_affine_defect"),
                max_of(curves().filter(|r| r.row.curve == "eta").map(|r| r.row.domega_defect)),
                CURVE_TOL,
            ));
            out.check(Check::at_most(
                p("mu_domega_defect"),
                max_of(curves().filter(|r| r.row.curve == "mu").map(|r| r.row.domega_defect)),
                CURVE_TOL,
            ));
            out.check(Check::at_most(p("bound_violations"), violations as f64, 0.0));
            if flat {
                out.check(Check::at_most(p("on_s_closed_form"), closed_form, CLOSED_FORM_TOL));
            } else if let Some(c) = fitted {
                out.check(
                    Check::at_least(p("case4_ratio"), min_ratio, 0.5 * c)
                        .with_note(format!("flat fitted constant c = {c}")),
                );
            } else {
                out.warnings
                    .push(format!("{label}: no flat case-4 constant to compare against"));
            }
        }
        out.summarize(&format!("{label}.curves"), curves().count());
        out.summarize(&format!("{label}.cases"), &counts);
        out.summarize(
            &format!("{label}.min_case4_ratio"),
            min_ratio.is_finite().then_some(min_ratio),
        );
        pair_rows.extend(results.into_iter().map(|r| r.row));
    }
    if let Some(c) = fitted {
        out.summarize("case4_constant", c);
    }
    out.file(
        "lemma_pairs.csv",
        csv_bytes(
            &pair_rows,
            &[
                "metric",
                "pair",
                "t",
                "x0",
                "x1",
                "x2",
                "s",
                "y0",
                "y1",
                "y2",
                "region",
                "m0",
                "curve",
                "endpoint_defect",
                "u_defect",
                "domega_defect",
                "error",
            ],
        )?,
    );
    out.file(
        "lemma_samples.csv",
        csv_bytes(
            &sample_rows,
            &[
                "metric",
                "pair",
                "case",
                "omega0",
                "omega1",
                "omega2",
                "theta",
                "phi",
                "bound",
                "margin",
                "case4_ratio",
                "closed_form_error",
            ],
        )?,
    );
    Ok(out)
}
