//! `mpc-reuse`: closed-loop simulations, reuse statistics, the networked
//! request experiment and active-set atlases from a JSON problem config.

mod commands;
mod manifest;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

const THREADS_ENV: &str = "MPC_REUSE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mpc-reuse", version, about = "Reuse of optimal feedback laws in linear MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one closed-loop trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Compare strategies over random initial states.
    Batch(BatchArgs),
    /// Count requests to a central QP node for set limits `l`.
    Netsim(NetsimArgs),
    /// Enumerate active sets on a state grid and export them as JSON.
    Atlas(AtlasArgs),
    /// Run a central node on a TCP address until interrupted.
    Serve(ServeArgs),
    /// Rerun the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value = "proposed")]
    pub strategy: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Region vertex JSON (two-state problems only). Defaults to `<out>.regions.json`.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Grid points per axis for the gamma atlas.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = mpc_reuse_core::closed_loop::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "jost,proposed,gamma")]
    pub strategies: Vec<String>,
    /// Grid points per axis for the gamma atlas.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Statistics JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = mpc_reuse_core::closed_loop::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
}

#[derive(Args, Debug)]
pub struct NetsimArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Maximum sets per response; several values run one after another.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub l: Vec<usize>,
    /// Central node started with `serve`; its `--l` must match.
    #[arg(long)]
    pub remote: Option<SocketAddr>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = mpc_reuse_core::closed_loop::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
}

#[derive(Args, Debug)]
pub struct AtlasArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub l: usize,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: SocketAddr,
}

/// Worker cap from the environment, if set to a positive integer.
fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

fn parse(args: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("mpc-reuse").chain(args.iter().map(String::as_str)))
}

fn run(cli: Cli, args: &[String]) -> Result<(), CliError> {
    let threads = thread_cap();
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, args),
        Command::Batch(a) => commands::batch(&a, args),
        Command::Netsim(a) => commands::netsim(&a, args, threads),
        Command::Atlas(a) => commands::atlas(&a, args),
        Command::Serve(a) => commands::serve(&a, threads),
        Command::Replay { manifest } => {
            let m = manifest::RunManifest::load(&manifest)
                .map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
            let cli = parse(&m.args).map_err(|e| CliError::Usage(e.to_string()))?;
            if matches!(cli.command, Command::Replay { .. }) {
                return Err(CliError::Usage("a manifest cannot replay another manifest".into()));
            }
            run(cli, &m.args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(t) = thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CliError::USAGE_EXIT);
        }
    };
    match run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
