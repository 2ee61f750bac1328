use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpmpc::commands;
use gpmpc::{CliError, RunConfig};
use gpmpc_core::mpc::Variant;

#[derive(Parser)]
#[command(name = "gpmpc", version, about = "GP-based MPC for an AV platoon followed by a human driver")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set mpc.horizon=12`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Nominal,
    Gp,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Nominal => Variant::Nominal,
            VariantArg::Gp => Variant::Gp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Both,
    Constant,
    Braking,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic training and test driving logs.
    GenerateData,
    /// Fit the discrepancy GP and report held-out RMSE.
    Train,
    /// Run one closed-loop simulation.
    Simulate {
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Overrides `scenario.name`.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
    },
    /// Run both controllers on the same plant and tabulate the metrics.
    Compare {
        #[arg(long, value_enum, default_value = "both")]
        scenario: ScenarioArg,
    },
    /// Render a simulation CSV as SVG.
    Plot {
        log: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set;
    if let Command::Simulate { scenario: Some(s), .. } = &cli.command {
        match s {
            ScenarioArg::Constant => overrides.push("scenario.name=constant".into()),
            ScenarioArg::Braking => overrides.push("scenario.name=braking".into()),
            ScenarioArg::Both => return Err(CliError::Config("simulate runs one scenario".into())),
        }
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::GenerateData => commands::generate_data(&cfg).map(drop),
        Command::Train => commands::train_model(&cfg).map(drop),
        Command::Simulate { variant, .. } => commands::simulate(&cfg, variant.into()).map(drop),
        Command::Compare { scenario } => {
            let names: &[&str] = match scenario {
                ScenarioArg::Both => &["constant", "braking"],
                ScenarioArg::Constant => &["constant"],
                ScenarioArg::Braking => &["braking"],
            };
            commands::compare_scenarios(&cfg, names).map(drop)
        }
        Command::Plot { log, out, variant } => {
            commands::plot(&cfg, &log, out.as_deref(), variant.map(Into::into)).map(drop)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpmpc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
