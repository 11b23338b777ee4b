use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use nupbr_cli::{Command, Mode, OutputFormat, RunConfig};

/// Growth-optimal portfolios and martingale deflators on finite models.
#[derive(Parser)]
#[command(name = "nupbr", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
}

#[derive(Subcommand)]
enum CommandArg {
    /// Check that the model file is well formed.
    Validate(CommonArgs),
    /// Look for immediate-arbitrage directions at every site.
    Cones(CommonArgs),
    /// Solve for the growth-optimal portfolio at every site.
    Numeraire(CommonArgs),
    /// Run the measure-rebalancing pipeline and report its certificates.
    Deflate(CommonArgs),
    /// Check the assembled deflator against a battery of strategies.
    Verify(CommonArgs),
    /// Run every stage and bundle the results into one document.
    Report(CommonArgs),
}

impl CommandArg {
    fn split(self) -> (Command, CommonArgs) {
        match self {
            CommandArg::Validate(a) => (Command::Validate, a),
            CommandArg::Cones(a) => (Command::Cones, a),
            CommandArg::Numeraire(a) => (Command::Numeraire, a),
            CommandArg::Deflate(a) => (Command::Deflate, a),
            CommandArg::Verify(a) => (Command::Verify, a),
            CommandArg::Report(a) => (Command::Report, a),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Model file to analyze.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    /// Input schema of the model file.
    #[arg(long, value_enum, default_value_t = ModeArg::Grid)]
    mode: ModeArg,

    /// Bound the verification checks must meet.
    #[arg(long = "tol", value_name = "X", default_value_t = 1e-10)]
    tolerance: f64,

    /// Seed for every randomized step.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,

    /// Output encoding.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,

    /// Write the report to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Grid,
    Lattice,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Exit code 2 is reserved for completed runs that found
            // something, so usage errors report as 1.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = cli.command.split();
    let config = RunConfig {
        model_path: args.model,
        mode: match args.mode {
            ModeArg::Grid => Mode::Grid,
            ModeArg::Lattice => Mode::Lattice,
        },
        command,
        tolerance: args.tolerance,
        seed: args.seed,
        output_format: match args.format {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        },
    };
    match nupbr_cli::run(&config) {
        Ok(outcome) => {
            let written = match &args.out {
                Some(path) => std::fs::write(path, &outcome.body)
                    .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display())),
                None => {
                    print!("{}", outcome.body);
                    Ok(())
                }
            };
            match written {
                Ok(()) => ExitCode::from(outcome.exit_code as u8),
                Err(err) => {
                    eprintln!("nupbr: {err:#}");
                    ExitCode::from(1)
                }
            }
        }
        Err(err) => {
            eprintln!("nupbr: {err:#}");
            ExitCode::from(1)
        }
    }
}
