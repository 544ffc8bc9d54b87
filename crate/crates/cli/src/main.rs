mod eval;
mod images;
mod session;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Exit status when `verify` rejects an edit.
pub const EXIT_REJECTED: u8 = 3;

#[derive(Parser)]
#[command(name = "subtract", version, about = "Progressive subtractive image simplification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a candidate edit to a reference and keep only its local change.
    Localize(images::LocalizeArgs),
    /// Score a removal; exits 3 when it fails the threshold.
    Verify(images::VerifyArgs),
    /// Run the removal loop from a scene or an image into a session directory.
    Simplify(session::SimplifyArgs),
    /// Write the frames for a trajectory path.
    ExportFrames(session::ExportArgs),
    /// Branch a saved session at a node.
    Branch(session::BranchArgs),
    /// Removal-order evaluation.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Inter-rater agreement and level confusion from a CSV of annotations.
    Agreement(eval::AgreementArgs),
    /// Pairwise removal preferences from a CSV of judgments.
    Preference(eval::PreferenceArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    Remote,
}

/// Back-end selection shared by the commands that run the engine.
#[derive(Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: BackendKind,
    /// Endpoint configuration JSON for the remote back-end.
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Seconds a propose request waits before answering 202.
    #[arg(long, default_value_t = 30)]
    propose_timeout: u64,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let backend = session::service_backend(&args.backend)?;
    let mut config = subtract_service::ServiceConfig::new(&args.data_dir, backend);
    config.propose_timeout = std::time::Duration::from_secs(args.propose_timeout);
    let addr = std::net::SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(subtract_service::serve(config, addr))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Localize(a) => images::localize(a).map(|()| ExitCode::SUCCESS),
        Command::Verify(a) => images::verify(a),
        Command::Simplify(a) => session::simplify(a).map(|()| ExitCode::SUCCESS),
        Command::ExportFrames(a) => session::export(a).map(|()| ExitCode::SUCCESS),
        Command::Branch(a) => session::branch(a).map(|()| ExitCode::SUCCESS),
        Command::Eval(c) => eval::run(c).map(|()| ExitCode::SUCCESS),
        Command::Agreement(a) => eval::agreement(a).map(|()| ExitCode::SUCCESS),
        Command::Preference(a) => eval::preference(a).map(|()| ExitCode::SUCCESS),
        Command::Serve(a) => serve(a).map(|()| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
