mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::AuthInput;
use config::ExperimentConfig;
use output::OutDir;

/// Input or configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser, Debug)]
#[command(
    name = "hwifp",
    version,
    about = "Hardware-impairment identifiability bounds and fingerprint authentication"
)]
struct Cli {
    /// JSON experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Relative eigenvalue threshold for the FIM rank (overrides the config).
    #[arg(long, global = true)]
    rank_tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Alphabet moments, identifiability factor and predicted FIM rank.
    Moments {
        /// Built-in alphabet names; defaults to the config list.
        #[arg(long = "modulation", short = 'm')]
        modulations: Vec<String>,
        /// JSON file with a custom alphabet (array of [re, im] pairs).
        #[arg(long = "alphabet")]
        alphabets: Vec<PathBuf>,
    },
    /// CRB sweep over SNR, modulation and burst length.
    CrbCurves,
    /// Monte Carlo MSE of the estimator against the CRB.
    McValidate {
        #[arg(long)]
        modulation: Option<String>,
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// FIM rank, kernel and coupling per modulation.
    Identifiability,
    /// Simulates enrollment and probe campaigns and writes the feature tables.
    FleetSim {
        /// Also write this many raw bursts per satellite and campaign.
        #[arg(long)]
        emit_bursts: Option<usize>,
    },
    /// Discrimination ratio of every feature.
    DrAnalysis {
        /// Feature table to analyse; simulated when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Second-campaign table for the cross-campaign stability check.
        #[arg(long)]
        probe_features: Option<PathBuf>,
    },
    /// Two-campaign authentication experiment.
    Authenticate {
        #[arg(long, requires = "probe_features", conflicts_with_all = ["enroll_bursts", "probe_bursts"])]
        enroll_features: Option<PathBuf>,
        #[arg(long, requires = "enroll_features")]
        probe_features: Option<PathBuf>,
        /// Identifiability factor of the feature tables' pilots (default: from the config).
        #[arg(long, requires = "enroll_features")]
        beta: Option<f64>,
        /// Directory of enrollment burst files.
        #[arg(long, requires = "probe_bursts")]
        enroll_bursts: Option<PathBuf>,
        #[arg(long, requires = "enroll_bursts")]
        probe_bursts: Option<PathBuf>,
        /// Weight with the published DR table over the six PA/oscillator features.
        #[arg(long)]
        published_dr: bool,
    },
    /// Prints the effective configuration as JSON.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.rank_tol {
        cfg.rank_tol = t;
    }
    match &cli.command {
        Command::McValidate { modulation, n_trials } => {
            if let Some(m) = modulation {
                cfg.mc_validate.modulation = m.clone();
            }
            if let Some(n) = n_trials {
                cfg.mc_validate.n_trials = *n;
            }
        }
        Command::FleetSim { emit_bursts: Some(n) } => cfg.fleet_sim.emit_bursts = *n,
        Command::Authenticate { published_dr: true, .. } => cfg.authenticate.published_dr = true,
        _ => {}
    }
    cfg.validate()?;

    if let Command::Config = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = OutDir::create(&cli.out_dir)?;
    match &cli.command {
        Command::Moments { modulations, alphabets } => commands::moments(&cfg, modulations, alphabets, &out),
        Command::CrbCurves => commands::crb_curves(&cfg, &out),
        Command::McValidate { .. } => commands::mc_validate(&cfg, &out),
        Command::Identifiability => commands::identifiability(&cfg, &out),
        Command::FleetSim { .. } => commands::fleet_sim(&cfg, &out),
        Command::DrAnalysis {
            features,
            probe_features,
        } => commands::dr_analysis(&cfg, features.as_deref(), probe_features.as_deref(), &out),
        Command::Authenticate {
            enroll_features,
            probe_features,
            beta,
            enroll_bursts,
            probe_bursts,
            ..
        } => {
            let input = match (enroll_features, probe_features, enroll_bursts, probe_bursts) {
                (Some(e), Some(p), _, _) => AuthInput::Features {
                    enroll: e,
                    probe: p,
                    beta: *beta,
                },
                (_, _, Some(e), Some(p)) => AuthInput::Bursts { enroll: e, probe: p },
                _ => AuthInput::Simulate,
            };
            commands::authenticate(&cfg, input, cfg.authenticate.published_dr, &out).map(|_| ())
        }
        Command::Config => unreachable!(),
    }
}

/// 2 for configuration or input errors, 3 for numerical failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hwifp::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                _ if e.is_numerical() => 3,
                E::InvalidConstellation(_)
                | E::UnknownConstellation(_)
                | E::InvalidParameter(_)
                | E::DegenerateInput(_)
                | E::InsufficientData(_)
                | E::Format(_)
                | E::Json(_)
                | E::Csv(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let numerical = anyhow::Error::new(hwifp::Error::Singular("x".into()));
        assert_eq!(exit_code(&numerical), 3);
        let cfg = anyhow::Error::new(hwifp::Error::UnknownConstellation("x".into())).context("loading");
        assert_eq!(exit_code(&cfg), 2);
        assert_eq!(exit_code(&anyhow::Error::new(ConfigError("x".into()))), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
