//! `ehgo`: run scenarios, sweeps, ablations and the verification suite, or
//! host an interactive teleoperation session over WebSocket.

mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for configuration errors (bad file, bad override, bad port).
pub const EXIT_CONFIG: u8 = 1;
/// Exit status when the integration diverged.
pub const EXIT_DIVERGED: u8 = 2;
/// Exit status when `verify` completed but at least one check failed.
pub const EXIT_CHECKS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "ehgo", version, about = "Output-feedback multirotor landing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Dotted-path override, e.g. `noise.position=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replaces the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write `log.csv` and `summary.json`.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the scenario with and without the rotor model in the observer.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Samples before this time are ignored by the oscillation metric.
        #[arg(long, default_value_t = 3.0)]
        settle: f64,
    },
    /// Steady-state estimation error at several observer gains.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.04,0.02,0.01")]
        epsilon: Vec<f64>,
    },
    /// Run the full verification suite and write `verification.json`.
    Verify {
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Host a live session: state frames out, velocity commands in.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed on stdout.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EHGO_LOG", "info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, out } => commands::run(&scenario, &out),
        Command::Ablate { scenario, out, settle } => commands::ablate(&scenario, &out, settle),
        Command::Sweep { scenario, out, epsilon } => commands::sweep(&scenario, &out, &epsilon),
        Command::Verify { out } => commands::verify(&out),
        Command::Serve { scenario, host, port, time_scale } => serve::serve(&scenario, &host, port, time_scale),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Diverged(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => f.write_str(&render(e)),
            Self::Diverged(e) => write!(f, "divergence: {}", render(e)),
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Config(e.into())
    }
}
