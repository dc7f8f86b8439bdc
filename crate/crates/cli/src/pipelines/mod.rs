//! The experiment pipelines behind each subcommand.

mod eikonal;
mod grid;
mod kernel;
mod lemma;
mod strichartz;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Validated;
use crate::error::{CliError, CliResult};
use crate::report::{write_run, Outcome, RunReport, TIMINGS_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    RunFlat,
    RunPerturbed,
    VerifyLemma,
    KernelDecay,
    StrichartzScaling,
    VerifyEikonal,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::RunFlat,
        Pipeline::RunPerturbed,
        Pipeline::VerifyLemma,
        Pipeline::KernelDecay,
        Pipeline::StrichartzScaling,
        Pipeline::VerifyEikonal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::RunFlat => "run-flat",
            Pipeline::RunPerturbed => "run-perturbed",
            Pipeline::VerifyLemma => "verify-lemma",
            Pipeline::KernelDecay => "kernel-decay",
            Pipeline::StrichartzScaling => "strichartz-scaling",
            Pipeline::VerifyEikonal => "verify-eikonal",
        }
    }

    /// The epsilon the pipeline runs at.
    fn epsilon(&self, v: &Validated) -> f64 {
        match self {
            Pipeline::RunFlat => 0.0,
            Pipeline::StrichartzScaling if !v.config.strichartz.perturbed => 0.0,
            _ => v.metric.epsilon(),
        }
    }
}

/// Seeded generator shared by the pipelines that sample pairs or points.
pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `pipeline` on a validated config and returns the in-memory outcome.
pub fn compute(pipeline: Pipeline, v: &Validated) -> CliResult<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(v.config.threads)
        .build()
        .map_err(|e| CliError::config("threads", e.to_string()))?;
    pool.install(|| match pipeline {
        Pipeline::RunFlat => grid::run_flat(v),
        Pipeline::RunPerturbed => grid::run_perturbed(v),
        Pipeline::VerifyLemma => lemma::run(v),
        Pipeline::KernelDecay => kernel::run(v),
        Pipeline::StrichartzScaling => strichartz::run(v),
        Pipeline::VerifyEikonal => eikonal::run(v),
    })
}

pub fn report_for(pipeline: Pipeline, v: &Validated, outcome: &Outcome) -> RunReport {
    RunReport {
        schema_version: crate::config::SCHEMA_VERSION,
        subcommand: pipeline.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: v.hash.clone(),
        seed: v.config.seed,
        epsilon: pipeline.epsilon(v),
        passed: outcome.checks.iter().all(|c| c.passed),
        checks: outcome.checks.clone(),
        warnings: outcome.warnings.clone(),
        summary: serde_json::to_value(&outcome.summary).expect("summary serializes"),
        artifacts: Vec::new(),
        timings_file: TIMINGS_FILE.to_string(),
    }
}

/// Computes and writes a run into `dir`. With `strict`, failed checks become
/// an error after the artifacts are written.
pub fn run(pipeline: Pipeline, v: &Validated, dir: &Path, strict: bool) -> CliResult<(PathBuf, RunReport)> {
    let outcome = compute(pipeline, v)?;
    let report = report_for(pipeline, v, &outcome);
    let (path, report) = write_run(dir, report, outcome)?;
    let failed = report.failed_checks().len();
    if strict && failed > 0 {
        return Err(CliError::ChecksFailed { failed });
    }
    Ok((path, report))
}

pub(crate) fn vec3(a: [f64; 3]) -> roughwave::Vec3 {
    roughwave::Vec3::new(a[0], a[1], a[2])
}

pub(crate) fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}
