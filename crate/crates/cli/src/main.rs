use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use legged_inekf::sim::Rates;

use legged_inekf_cli::commands::{self, CaseArg, Overrides};
use legged_inekf_cli::error::CliError;

/// Invariant EKF for legged robots: simulation, log replay and
/// observability analysis.
///
/// Exit status: 0 on success, 1 for a malformed config or log (with file
/// and line), 2 for filter divergence or a timestamp regression.
#[derive(Parser, Debug)]
#[command(name = "estimator", version)]
struct Cli {
    /// Scenario seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sensor rates in Hz as `imu,contact,camera` (config default 800,2000,200).
    #[arg(long, global = true, value_parser = parse_rates)]
    rates: Option<Rates>,
    /// Mahalanobis gate for kinematic updates (config default 30.1).
    #[arg(long, global = true)]
    gate_rho: Option<f64>,
    /// Camera noise-tuner window (config default 5).
    #[arg(long, global = true)]
    tuner_window: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a walk, write the sensor logs, filter them, write
    /// estimates and metrics.json.
    Sim {
        /// Experiment config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter a log directory (imu.csv, contacts.csv, optional camera.csv
    /// and truth.csv).
    Replay {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for estimates.csv and metrics.json.
        #[arg(long)]
        out: PathBuf,
        /// Start from `filter.initial_state` of the config instead of the
        /// scenario-derived initial estimate used by `sim`.
        #[arg(long)]
        filter_initial_state: bool,
    },
    /// Rank analysis of the camera observation; prints JSON.
    Observability {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        case: CaseArg,
        /// Time on the simulated walk to linearize at, s.
        #[arg(long, default_value_t = 10.0)]
        time: f64,
        /// Camera ticks in the discrete matrix (dynamic case).
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_rates(s: &str) -> Result<Rates, String> {
    Rates::parse(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ov = Overrides {
        seed: cli.seed,
        rates: cli.rates,
        gate_rho: cli.gate_rho,
        tuner_window: cli.tuner_window,
    };
    match cli.command {
        Command::Sim { config, out } => {
            let cfg = commands::load_config(config.as_deref(), &ov)?;
            let metrics = commands::cmd_sim(&cfg, &out)?;
            for (k, m) in &metrics {
                let v = m.velocity_rmse;
                eprintln!(
                    "{k}: velocity RMSE [{:.4}, {:.4}, {:.4}] m/s, horizontal drift {:.2}%",
                    v[0],
                    v[1],
                    v[2],
                    100.0 * m.horizontal_drift_fraction
                );
            }
        }
        Command::Replay {
            logs,
            config,
            out,
            filter_initial_state,
        } => {
            let cfg = commands::load_config(config.as_deref(), &ov)?;
            let s = commands::cmd_replay(&cfg, &logs, &out, filter_initial_state)?;
            if let Some(d) = &s.degraded {
                eprintln!("degraded mode: {d}");
            }
            eprintln!("{}: {} updates", s.variant.name(), s.updates);
        }
        Command::Observability {
            config,
            case,
            time,
            steps,
            out,
        } => {
            let cfg = commands::load_config(config.as_deref(), &ov)?;
            let report = commands::cmd_observability(&cfg, case, time, steps)?;
            commands::write_observability(out.as_ref(), &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
