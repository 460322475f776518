//! `cogmap` command line: run the service, score and replay session logs,
//! and run synthetic experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod profiles;

#[derive(Debug, Parser)]
#[command(name = "cogmap", version, about = "Tangible cognitive-map assessment tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the session service until interrupted.
    Serve(ServeArgs),
    /// Score session logs and write a report.
    Score(ScoreArgs),
    /// Generate and score synthetic sessions from agent profiles.
    Simulate(SimulateArgs),
    /// Print the board and metrics after a given event of a trial.
    Replay(ReplayArgs),
    /// Write the built-in default plan as plan files.
    PlanInit(PlanInitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PlanArg {
    /// Plan file or directory holding plan.json. Without it the built-in
    /// default plan is used.
    #[arg(long, env = "CMP_PLAN_DIR")]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub plan: PlanArg,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Directory for session logs.
    #[arg(long, default_value = "sessions")]
    pub log_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// One or more .session.jsonl files.
    #[arg(long, required = true, num_args = 1..)]
    pub session: Vec<PathBuf>,
    #[command(flatten)]
    pub plan: PlanArg,
    /// Posthoc corrections for a single session. By default a sibling
    /// `<id>.corrections.json` is used when present.
    #[arg(long)]
    pub corrections: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file describing the agent groups.
    #[arg(long)]
    pub profiles: PathBuf,
    #[command(flatten)]
    pub plan: PlanArg,
    /// Participants per group.
    #[arg(long, default_value_t = 10)]
    pub participants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for session logs and the aggregate report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[command(flatten)]
    pub plan: PlanArg,
    /// Trial index as recorded in the log.
    #[arg(long)]
    pub trial: usize,
    /// Number of logged events to apply; 0 is the board before any event.
    #[arg(long)]
    pub at_event: usize,
    #[arg(long)]
    pub corrections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanInitArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            2
        }
    }
}

/// Joins an error chain, skipping causes whose text the previous message
/// already includes.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if last.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        last = msg;
    }
    out
}
