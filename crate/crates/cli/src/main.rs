use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roughwave_cli::config::{output_dir, ExperimentConfig};
use roughwave_cli::pipelines::{self, Pipeline};
use roughwave_cli::plot::emit_plot_data;
use roughwave_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "roughwave",
    version,
    about = "Verification experiments for wave parametrices on rough metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config, then $ROUGHWAVE_OUT.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Exit with status 1 when any check fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Flat-metric exactness checks on a grid.
    RunFlat(RunArgs),
    /// Eikonal and frame checks for the perturbed metric.
    RunPerturbed(RunArgs),
    /// Endpoint identities and the phase bound over sampled pairs.
    VerifyLemma(RunArgs),
    /// Dispersive decay, oracle and rescaling checks for the kernel.
    KernelDecay(RunArgs),
    /// Strichartz norm scaling across dyadic levels.
    StrichartzScaling(RunArgs),
    /// Geodesic constancy, residual and regularity of the optical function.
    VerifyEikonal(RunArgs),
    /// Writes the default config as TOML.
    DefaultConfig,
    /// Merges run artifacts into tidy CSV tables.
    EmitPlotData {
        /// Run directories or report.json paths.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, short, default_value = "plot-data")]
        out: PathBuf,
    },
}

fn run(pipeline: Pipeline, args: &RunArgs) -> CliResult<()> {
    let (config, base) = match &args.config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    let validated = config.validate(&base)?;
    let dir = output_dir(args.out.as_deref(), &validated.config).join(pipeline.name());
    let (path, report) = pipelines::run(pipeline, &validated, &dir, false)?;
    for check in &report.checks {
        let status = if check.passed { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<48} {:>12.4e} (limit {:.4e})",
            check.name, check.value, check.limit
        );
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("report: {}", path.display());
    let failed = report.failed_checks().len();
    if args.strict && failed > 0 {
        return Err(CliError::ChecksFailed { failed });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunFlat(a) => run(Pipeline::RunFlat, a),
        Command::RunPerturbed(a) => run(Pipeline::RunPerturbed, a),
        Command::VerifyLemma(a) => run(Pipeline::VerifyLemma, a),
        Command::KernelDecay(a) => run(Pipeline::KernelDecay, a),
        Command::StrichartzScaling(a) => run(Pipeline::StrichartzScaling, a),
        Command::VerifyEikonal(a) => run(Pipeline::VerifyEikonal, a),
        Command::DefaultConfig => toml::to_string(&ExperimentConfig::default())
            .map(|text| print!("{text}"))
            .map_err(|e| CliError::config("", e.to_string())),
        Command::EmitPlotData { reports, out } => emit_plot_data(reports, out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
