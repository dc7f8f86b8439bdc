//! Frequency-localized Strichartz norms across dyadic levels.

use roughwave::eikonal::{Characteristics, FlatPhase, PhaseField};
use roughwave::strichartz::{scaling_regression, NormReport, ScalingReport};
use serde::Serialize;

use crate::config::Validated;
use crate::error::{CliResult, StageContext};
use crate::report::{csv_bytes, Check, Outcome};

/// Allowed excess of a fitted slope over its target exponent.
const SLOPE_SLACK: f64 = 0.1;

#[derive(Serialize)]
struct LevelRow {
    pair: String,
    order: u8,
    j: u32,
    norm: f64,
    data_norm: f64,
    normalized: f64,
    bound: f64,
    tail_fraction: f64,
    refinement_change: f64,
}

const ORDER_NAMES: [&str; 3] = ["value", "gradient", "hessian"];

fn norm_checks(out: &mut Outcome, rows: &mut Vec<LevelRow>, label: &str, report: &NormReport) {
    let name = ORDER_NAMES[report.order as usize];
    out.check(Check::at_most(
        format!("strichartz.{label}.{name}.slope"),
        report.slope,
        report.target_r + SLOPE_SLACK,
    ));
    out.check(
        Check::at_most(
            format!("strichartz.{label}.{name}.single_constant"),
            report.worst_bound_ratio,
            1.0,
        )
        .with_note(format!("constant fitted at j = {}", report.per_j[0].j)),
    );
    rows.extend(report.per_j.iter().map(|l| LevelRow {
        pair: label.to_string(),
        order: report.order,
        j: l.j,
        norm: l.norm,
        data_norm: l.data_norm,
        normalized: l.normalized,
        bound: l.bound,
        tail_fraction: l.tail_fraction,
        refinement_change: l.refinement_change,
    }));
}

pub fn run(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let s = &v.config.strichartz;
    let solver = Characteristics::new(&v.metric);
    let phase: &dyn PhaseField = if s.perturbed && !v.metric.is_flat() {
        &solver
    } else {
        &FlatPhase
    };
    let options = s.scaling();
    let mut reports: Vec<ScalingReport> = Vec::new();
    let mut rows = Vec::new();
    for pair in &v.strichartz_pairs {
        let label = format!("({},{})", pair.p, pair.q);
        let report = out
            .timings
            .time(&format!("scaling {label}"), || {
                scaling_regression(phase, &s.profile, pair, &options)
            })
            .stage("scaling_regression")?;
        for norm in [Some(&report.value), report.gradient.as_ref(), report.hessian.as_ref()]
            .into_iter()
            .flatten()
        {
            norm_checks(&mut out, &mut rows, &label, norm);
        }
        reports.push(report);
    }
    out.summarize("levels", &s.levels);
    out.summarize(
        "slopes",
        reports
            .iter()
            .flat_map(|r| [Some(&r.value), r.gradient.as_ref(), r.hessian.as_ref()])
            .flatten()
            .map(|n| {
                (
                    format!("({},{}) {}", n.pair.p, n.pair.q, ORDER_NAMES[n.order as usize]),
                    n.slope,
                )
            })
            .collect::<std::collections::BTreeMap<_, _>>(),
    );
    out.json_file("norm_report.json", &reports)?;
    out.file(
        "levels.csv",
        csv_bytes(
            &rows,
            &[
                "pair",
                "order",
                "j",
                "norm",
                "data_norm",
                "normalized",
                "bound",
                "tail_fraction",
                "refinement_change",
            ],
        )?,
    );
    Ok(out)
}
