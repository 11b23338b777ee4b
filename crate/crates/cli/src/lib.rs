//! Command implementations behind the `nupbr` binary.
//!
//! Everything here is deterministic: the same configuration against the
//! same model file produces byte-identical output. Exit codes separate
//! three situations the caller may want to script against:
//!
//! * `0`: every requested check passed,
//! * `2`: the run completed and found something (an arbitrage witness, a
//!   failed martingale check, an invalid model),
//! * `1`: the run itself could not complete (unreadable file, malformed
//!   JSON, solver error).

mod emit;
mod report;

use std::fmt::Display;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;

use nupbr_core::characteristics::{grid_to_wire, parse_grid};
use nupbr_core::lattice::{lattice_to_wire, parse_lattice};

use report::{ParsedModel, Provenance};

pub use report::VERIFY_STRATEGIES;

/// Which input schema the model file uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    /// Time-indexed characteristic slices.
    Grid,
    /// An explicit finite event tree.
    Lattice,
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Grid => "grid",
            Mode::Lattice => "lattice",
        })
    }
}

/// What to compute.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Command {
    Validate,
    Cones,
    Numeraire,
    Deflate,
    Verify,
    Report,
}

impl Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Command::Validate => "validate",
            Command::Cones => "cones",
            Command::Numeraire => "numeraire",
            Command::Deflate => "deflate",
            Command::Verify => "verify",
            Command::Report => "report",
        })
    }
}

/// Output encoding.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// One fully specified run.
pub struct RunConfig {
    pub model_path: PathBuf,
    pub mode: Mode,
    pub command: Command,
    pub tolerance: f64,
    pub seed: u64,
    pub output_format: OutputFormat,
}

/// What a completed run hands back to the binary.
pub struct RunOutcome {
    /// 0 all checks passed, 2 checks completed and found something.
    pub exit_code: i32,
    /// The serialized report, newline terminated.
    pub body: String,
}

fn emit<T: Serialize>(format: OutputFormat, value: &T) -> anyhow::Result<String> {
    match format {
        OutputFormat::Json => emit::to_json(value),
        OutputFormat::Csv => emit::to_csv(value),
    }
}

fn parse_model(config: &RunConfig) -> anyhow::Result<ParsedModel> {
    let text = std::fs::read_to_string(&config.model_path)
        .with_context(|| format!("reading model file {}", config.model_path.display()))?;
    match config.mode {
        Mode::Grid => {
            let (grid, warnings) = parse_grid(&text)
                .with_context(|| format!("parsing {} as a grid model", config.model_path.display()))?;
            Ok(ParsedModel::Grid { grid, warnings })
        }
        Mode::Lattice => {
            let model = parse_lattice(&text).with_context(|| {
                format!("parsing {} as a lattice model", config.model_path.display())
            })?;
            Ok(ParsedModel::Lattice(model))
        }
    }
}

fn model_echo(model: &ParsedModel) -> anyhow::Result<serde_json::Value> {
    let value = match model {
        ParsedModel::Grid { grid, .. } => serde_json::to_value(grid_to_wire(grid))?,
        ParsedModel::Lattice(m) => serde_json::to_value(lattice_to_wire(m))?,
    };
    Ok(value)
}

fn code(pass: bool) -> i32 {
    if pass {
        0
    } else {
        2
    }
}

/// Runs one command end to end and serializes its report.
///
/// `Err` means the run could not complete; the binary maps that to exit
/// code 1.
pub fn run(config: &RunConfig) -> anyhow::Result<RunOutcome> {
    anyhow::ensure!(
        config.tolerance > 0.0 && config.tolerance.is_finite(),
        "tolerance must be positive and finite, got {}",
        config.tolerance
    );
    let provenance = Provenance {
        tool: "nupbr",
        version: env!("CARGO_PKG_VERSION"),
        command: config.command.to_string(),
        mode: config.mode.to_string(),
        model_path: config.model_path.display().to_string(),
        seed: config.seed,
        tolerance: config.tolerance,
    };
    let model = parse_model(config)?;

    match config.command {
        Command::Validate => {
            let validate = report::validate_section(&model)?;
            let exit_code = code(validate.valid);
            let body = emit(config.output_format, &report::ValidateReport { provenance, validate })?;
            Ok(RunOutcome { exit_code, body })
        }
        Command::Cones => {
            let cones = report::cones_section(&model)?;
            let exit_code = code(!cones.arbitrage_found);
            let body = emit(config.output_format, &report::ConesReport { provenance, cones })?;
            Ok(RunOutcome { exit_code, body })
        }
        Command::Numeraire => {
            let numeraire = report::numeraire_section(&model, config.seed)?;
            let exit_code = code(numeraire.all_solved);
            let body =
                emit(config.output_format, &report::NumeraireReport { provenance, numeraire })?;
            Ok(RunOutcome { exit_code, body })
        }
        Command::Deflate => {
            let deflation = report::run_deflation(&model, config.seed)?;
            let deflate = report::deflate_section(&deflation);
            let exit_code = code(deflate.clean);
            let body = emit(config.output_format, &report::DeflateReport { provenance, deflate })?;
            Ok(RunOutcome { exit_code, body })
        }
        Command::Verify => {
            let deflation = report::run_deflation(&model, config.seed)?;
            let verify =
                report::verify_section(&model, &deflation, config.tolerance, config.seed)?;
            let exit_code = code(verify.passes);
            let body = emit(config.output_format, &report::VerifyReportOut { provenance, verify })?;
            Ok(RunOutcome { exit_code, body })
        }
        Command::Report => {
            let validate = report::validate_section(&model)?;
            let cones = report::cones_section(&model)?;
            let numeraire = report::numeraire_section(&model, config.seed)?;
            let deflation = report::run_deflation(&model, config.seed)?;
            let deflate = report::deflate_section(&deflation);
            let verify =
                report::verify_section(&model, &deflation, config.tolerance, config.seed)?;
            let pass = validate.valid
                && !cones.arbitrage_found
                && numeraire.all_solved
                && deflate.clean
                && verify.passes;
            let full = report::FullReport {
                provenance,
                model: model_echo(&model)?,
                validate,
                cones,
                numeraire,
                deflate,
                verify,
            };
            let body = emit(config.output_format, &full)?;
            Ok(RunOutcome { exit_code: code(pass), body })
        }
    }
}
