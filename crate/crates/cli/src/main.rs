use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use soilsph::cli_io::{self, Overrides, EXIT_INVALID, EXIT_OK};
use soilsph::momentum::{PoreWaterForm, StressForm};
use soilsph::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "soilsph",
    version,
    about = "Plane-strain SPH solver for submerged elastic soil"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Formulation {
    Corrected,
    Conventional,
}

#[derive(Clone, Copy, ValueEnum)]
enum StressFormArg {
    Rho2,
    Rhoab,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Foundation,
    Embankment,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write snapshots, probes, report and manifest.
    Run {
        scenario: PathBuf,
        /// Output directory.
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Pore-water pressure term.
        #[arg(long, value_enum)]
        formulation: Option<Formulation>,
        #[arg(long, value_enum)]
        stress_form: Option<StressFormArg>,
        #[arg(long)]
        no_kernel_correction: bool,
        /// Damping coefficient for the gravity-loading phase.
        #[arg(long)]
        xi: Option<f64>,
        /// Sequential, index-ordered evaluation.
        #[arg(long)]
        deterministic: bool,
        /// Seed for the particle perturbation, if the scenario has one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Print a preset scenario file.
    Init {
        #[arg(value_enum)]
        preset: Preset,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            out,
            formulation,
            stress_form,
            no_kernel_correction,
            xi,
            deterministic,
            seed,
        } => {
            let overrides = Overrides {
                pore_water: formulation.map(|f| match f {
                    Formulation::Corrected => PoreWaterForm::CorrectedDifference,
                    Formulation::Conventional => PoreWaterForm::ConventionalSum,
                }),
                stress_form: stress_form.map(|f| match f {
                    StressFormArg::Rho2 => StressForm::Rho2,
                    StressFormArg::Rhoab => StressForm::RhoAb,
                }),
                no_kernel_correction,
                xi,
                deterministic,
                seed,
            };
            let outcome = cli_io::run(&scenario, &out, &overrides);
            if outcome.exit_code == EXIT_OK {
                println!("{}", outcome.message);
            } else {
                eprintln!("error: {}", outcome.message.trim_end());
            }
            if let Some(m) = &outcome.manifest {
                println!(
                    "status: {}, surface expulsion: {} m, outputs in {}",
                    m.status,
                    m.surface_expulsion,
                    out.display()
                );
            }
            outcome.exit_code
        }
        Command::Validate { scenario } => {
            let report = cli_io::validate_file(&scenario);
            print!("{report}");
            if report.is_ok() {
                EXIT_OK
            } else {
                EXIT_INVALID
            }
        }
        Command::Init { preset } => {
            let c = match preset {
                Preset::Foundation => ScenarioConfig::submerged_foundation(),
                Preset::Embankment => ScenarioConfig::embankment(),
            };
            match cli_io::emit_scenario(&c) {
                Ok(text) => {
                    print!("{text}");
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INVALID
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
