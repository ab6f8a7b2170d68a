//! `tatesens`: sensitivity analysis for generalizing trial results to a
//! target population.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tatesens::simulation::Misspecification;
use tatesens::ErrorClass;

use run::{MethodChoice, SimulateArgs};

#[derive(Parser)]
#[command(
    name = "tatesens",
    version,
    about = "Sensitivity analysis for target-population treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the trial ATE and sweep the target-population effect over the V range.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        method: MethodChoice,
        /// Output directory; defaults to `out_dir` in the config, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidate effect modifiers by their treatment-interaction statistics.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulation evaluation of both methods.
    Simulate {
        /// Scenario file; without it a preset is used.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "scenario")]
        preset: Option<Preset>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the synthetic illustration trial, population and config.
    MakeDemoData {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 2018)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Preset {
    None,
    ZMisspec,
    VMisspec,
}

impl From<Preset> for Misspecification {
    fn from(p: Preset) -> Self {
        match p {
            Preset::None => Misspecification::None,
            Preset::ZMisspec => Misspecification::ZMisspec,
            Preset::VMisspec => Misspecification::VMisspec,
        }
    }
}

const EXIT_CONFIG: u8 = 2;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Io => 3,
        ErrorClass::Data => 4,
        ErrorClass::Coverage => 5,
        ErrorClass::Model => 6,
        ErrorClass::Fit => 7,
        ErrorClass::Weighting => 8,
        ErrorClass::Sensitivity => 9,
        ErrorClass::UnobservedInTrial => 10,
        ErrorClass::Simulation => 11,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let result = match cli.command {
        Command::Analyze { config, method, out } => match config::load(&config) {
            Ok(loaded) => {
                let out = out
                    .or_else(|| loaded.config.out_dir.as_ref().map(|p| loaded.resolve(p)))
                    .unwrap_or_else(|| PathBuf::from("out"));
                run::analyze(&loaded, method, &out)
            }
            Err(e) => {
                eprintln!("tatesens: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        Command::Scan { config, out } => match config::load(&config) {
            Ok(loaded) => {
                let out = out
                    .or_else(|| loaded.config.out_dir.as_ref().map(|p| loaded.resolve(p)))
                    .unwrap_or_else(|| PathBuf::from("out"));
                run::scan(&loaded, &out)
            }
            Err(e) => {
                eprintln!("tatesens: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        Command::Simulate {
            scenario,
            preset,
            reps,
            seed,
            out,
        } => run::simulate(
            &SimulateArgs {
                scenario,
                preset: preset.map(Into::into),
                reps,
                seed,
            },
            &out,
        ),
        Command::MakeDemoData { out, seed } => run::make_demo_data(&out, seed),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tatesens: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
