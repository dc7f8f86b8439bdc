//! Dispersive decay of the rescaled kernel, the flat oracle comparisons and
//! the two-path rescaling identity.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use roughwave::eikonal::{Characteristics, FlatPhase, PhaseField};
use roughwave::kernel::{check_dispersive, check_rescaling, decay_pairs, eval_kernel, k_scale, log_ladder, KernelPair};
use roughwave::parametrix::QuadratureOptions;
use roughwave::{make_metric, MetricSpec, SpacetimePoint, Vec3};
use serde::Serialize;

use super::{rng, vec3};
use crate::config::{KernelSection, Validated};
use crate::error::{CliResult, StageContext};
use crate::report::{csv_bytes, Check, Outcome};

const SLOPE_TOL: f64 = 0.15;
const ORACLE_TOL: f64 = 1e-6;
const RESCALING_TOL: f64 = 1e-4;
/// Allowed growth of the dispersive ceiling over the flat one on the same pairs.
const CEILING_FACTOR: f64 = 1.5;

#[derive(Serialize)]
struct DecayRow {
    pair: usize,
    region: &'static str,
    offset: f64,
    dt: f64,
    #[serde(rename = "absK")]
    abs_k: f64,
    majorant: f64,
    ratio: f64,
    refinement_change: f64,
}

#[derive(Serialize)]
struct OracleRow {
    pair: usize,
    t: f64,
    x0: f64,
    x1: f64,
    x2: f64,
    s: f64,
    y0: f64,
    y1: f64,
    y2: f64,
    reduced_re: f64,
    reduced_im: f64,
    direct_re: f64,
    direct_im: f64,
    relative: f64,
    majorant_margin: f64,
    shifted_relative: f64,
}

#[derive(Serialize)]
struct ProbeRow {
    t: f64,
    x0: f64,
    x1: f64,
    x2: f64,
    nested_re: f64,
    nested_im: f64,
    rescaled_re: f64,
    rescaled_im: f64,
    relative: f64,
}

/// Random pairs of `2^j M` kept inside the domain at level `j` and `j + 1`.
fn oracle_pairs(seed: u64, j: u32, count: usize) -> Vec<KernelPair> {
    let mut rng = rng(seed, 3);
    let scale = 2f64.powi(j as i32);
    (0..count)
        .map(|_| {
            let t = rng.random_range(0.0..0.4) * scale;
            let s = t + rng.random_range(0.05..0.5) * scale;
            let mut coord = || rng.random_range(-0.5..0.5) * scale;
            let x = Vec3::new(coord(), coord(), coord());
            let shift = Vec3::new(coord(), coord(), coord()) * 1.2;
            KernelPair::new(SpacetimePoint::new(t, x), SpacetimePoint::new(s, x + shift))
        })
        .collect()
}

/// `|a - b|` relative to `max(|a|, 1e-4 k_scale)`.
fn relative(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(1e-4 * k_scale())
}

fn decay(out: &mut Outcome, v: &Validated, k: &KernelSection) -> CliResult<()> {
    let solver = Characteristics::new(&v.metric);
    let phase: &dyn PhaseField = if v.metric.is_flat() { &FlatPhase } else { &solver };
    let base = SpacetimePoint::new(k.base[0], Vec3::new(k.base[1], k.base[2], k.base[3]));
    let ladder = log_ladder(k.ladder.lo, k.ladder.hi, k.ladder.points);
    let pairs = out
        .timings
        .time("decay_pairs", || {
            decay_pairs(&solver, k.j, &base, &vec3(k.direction), &ladder, &k.offsets)
        })
        .stage("decay_pairs")?;
    let report = out
        .timings
        .time("dispersive", || check_dispersive(phase, &k.kernel_config(k.j), &pairs))
        .stage("check_dispersive")?;
    out.check(Check::at_least("kernel.regions", report.regions.len() as f64, 3.0));
    for r in &report.regions {
        let label = r.region.label();
        out.check(Check::within(format!("kernel.slope.{label}"), r.slope, -1.0, SLOPE_TOL));
        out.check(Check::at_least(
            format!("kernel.decades.{label}"),
            r.decades,
            1.0 - 1e-9,
        ));
    }
    out.check(Check::at_most(
        "kernel.majorant_violations",
        report.majorant_violations as f64,
        0.0,
    ));
    if !v.metric.is_flat() {
        let flat = out
            .timings
            .time("dispersive_flat", || {
                check_dispersive(&FlatPhase, &k.kernel_config(k.j), &pairs)
            })
            .stage("check_dispersive")?;
        out.check(Check::at_most(
            "kernel.ceiling_over_flat",
            report.ceiling / flat.ceiling,
            CEILING_FACTOR,
        ));
        out.summarize("flat_ceiling", flat.ceiling);
    }
    out.summarize("j", report.j);
    out.summarize("epsilon", report.epsilon);
    out.summarize("ceiling", report.ceiling);
    out.summarize("regions", &report.regions);
    let rows: Vec<DecayRow> = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| DecayRow {
            pair: i,
            region: r.region.label(),
            offset: r.offset,
            dt: r.dt,
            abs_k: r.abs_k,
            majorant: r.majorant,
            ratio: r.ratio,
            refinement_change: r.refinement_change,
        })
        .collect();
    out.file(
        "dispersive.csv",
        csv_bytes(
            &rows,
            &[
                "pair",
                "region",
                "offset",
                "dt",
                "absK",
                "majorant",
                "ratio",
                "refinement_change",
            ],
        )?,
    );
    Ok(())
}

fn oracle(out: &mut Outcome, v: &Validated, k: &KernelSection) -> CliResult<()> {
    let flat = make_metric(&MetricSpec {
        domain_radius: v.config.metric.domain_radius,
        ..MetricSpec::minkowski()
    })
    .stage("metric")?;
    let characteristics = Characteristics::new(&flat);
    let j = k.oracle_j;
    let reduced_config = k.kernel_config(j);
    let mut direct_config = reduced_config;
    direct_config.quadrature = QuadratureOptions {
        force_direct: true,
        ..k.quadrature
    };
    let mut shifted_config = direct_config;
    shifted_config.j = j + 1;
    let pairs = oracle_pairs(v.config.seed, j, k.oracle_pairs);
    let rows: Vec<OracleRow> = out.timings.time("oracle", || {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| -> roughwave::Result<OracleRow> {
                let reduced = eval_kernel(&FlatPhase, &reduced_config, p)?;
                let direct = eval_kernel(&FlatPhase, &direct_config, p)?;
                let here = eval_kernel(&characteristics, &direct_config, p)?;
                let shifted = eval_kernel(&characteristics, &shifted_config, p)?;
                Ok(OracleRow {
                    pair: i,
                    t: p.from.t,
                    x0: p.from.x[0],
                    x1: p.from.x[1],
                    x2: p.from.x[2],
                    s: p.to.t,
                    y0: p.to.x[0],
                    y1: p.to.x[1],
                    y2: p.to.x[2],
                    reduced_re: reduced.value.re,
                    reduced_im: reduced.value.im,
                    direct_re: direct.value.re,
                    direct_im: direct.value.im,
                    relative: relative(reduced.value, direct.value),
                    majorant_margin: reduced.ibp_majorant.min(direct.ibp_majorant)
                        - reduced.value.norm().max(direct.value.norm()),
                    shifted_relative: relative(here.value, shifted.value),
                })
            })
            .collect::<roughwave::Result<Vec<_>>>()
            .stage("kernel_oracle")
    })?;
    let worst = |f: fn(&OracleRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    out.check(Check::at_most(
        "kernel.oracle_relative",
        worst(|r| r.relative),
        ORACLE_TOL,
    ));
    out.check(Check::at_most(
        "kernel.j_independence",
        worst(|r| r.shifted_relative),
        ORACLE_TOL,
    ));
    let min_margin = rows.iter().map(|r| r.majorant_margin).fold(f64::INFINITY, f64::min);
    out.check(Check::at_least(
        "kernel.oracle_majorant_margin",
        min_margin,
        -1e-4 * k_scale(),
    ));
    out.summarize("oracle_pairs", rows.len());
    out.file(
        "kernel_oracle.csv",
        csv_bytes(
            &rows,
            &[
                "pair",
                "t",
                "x0",
                "x1",
                "x2",
                "s",
                "y0",
                "y1",
                "y2",
                "reduced_re",
                "reduced_im",
                "direct_re",
                "direct_im",
                "relative",
                "majorant_margin",
                "shifted_relative",
            ],
        )?,
    );
    Ok(())
}

/// Unscaled probe points spread over `M` near the test function.
pub fn rescaling_probes(count: usize) -> Vec<SpacetimePoint> {
    (0..count)
        .map(|k| {
            let a = 0.6 * k as f64;
            let t = (k as f64 + 0.5) / count as f64;
            let z = 0.2 * (k as f64 / count as f64 - 0.5);
            SpacetimePoint::new(t, Vec3::new(0.3 * a.cos(), 0.3 * a.sin(), z))
        })
        .collect()
}

fn rescaling(out: &mut Outcome, k: &KernelSection) -> CliResult<()> {
    let probes = rescaling_probes(k.rescaling_probes);
    let report = out
        .timings
        .time("rescaling", || {
            check_rescaling(&FlatPhase, &k.kernel_config(k.rescaling_j), &k.rescaling_test, &probes)
        })
        .stage("check_rescaling")?;
    out.check(Check::at_most(
        "kernel.rescaling_relative",
        report.max_relative,
        RESCALING_TOL,
    ));
    let rows: Vec<ProbeRow> = report
        .probes
        .iter()
        .map(|p| ProbeRow {
            t: p.point.t,
            x0: p.point.x[0],
            x1: p.point.x[1],
            x2: p.point.x[2],
            nested_re: p.nested.re,
            nested_im: p.nested.im,
            rescaled_re: p.rescaled.re,
            rescaled_im: p.rescaled.im,
            relative: p.relative,
        })
        .collect();
    out.file(
        "rescaling.csv",
        csv_bytes(
            &rows,
            &[
                "t",
                "x0",
                "x1",
                "x2",
                "nested_re",
                "nested_im",
                "rescaled_re",
                "rescaled_im",
                "relative",
            ],
        )?,
    );
    Ok(())
}

pub fn run(v: &Validated) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let k = &v.config.kernel;
    decay(&mut out, v, k)?;
    if k.oracle_pairs > 0 {
        oracle(&mut out, v, k)?;
    }
    if k.rescaling_probes > 0 {
        rescaling(&mut out, k)?;
    }
    Ok(out)
}
