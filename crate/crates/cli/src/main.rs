mod commands;
mod metrics;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recap_core::modelclient::BackendDescriptor;

/// Filter an image–caption corpus, recaption it, mix captions into a
/// training manifest, and evaluate text-to-image outputs.
#[derive(Debug, Parser)]
#[command(name = "recap", version, propagate_version = true)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply the aesthetic / watermark / NSFW / size filter and split off a holdout set.
    Filter(commands::FilterArgs),
    /// Generate short and long captions for every record.
    Recaption(commands::RecaptionArgs),
    /// Mix caption sources into a token-gated training manifest.
    Mix(commands::MixArgs),
    /// Caption statistics and readability for one caption field.
    Stats(commands::StatsArgs),
    /// Fréchet distance between two embedding files.
    Fd(commands::FdArgs),
    /// Embed one caption field (or a text file) into an embedding file.
    Embed(commands::EmbedArgs),
    /// Compute one evaluation metric, or combine metric reports.
    #[command(subcommand)]
    Metrics(metrics::MetricsCommand),
    /// Run filter, recaption, mix, stats and metrics from one config file.
    Pipeline(commands::PipelineArgs),
}

/// Model backend flags shared by commands that call a model.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// `mock` or the base URL of an inference service.
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Per-request timeout.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    /// Items per embedding request.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Embedding dimension of the mock backend.
    #[arg(long, default_value_t = 512)]
    mock_dim: usize,
    /// Detection fixture for the mock backend (JSON keyed by image reference).
    #[arg(long)]
    detections: Option<PathBuf>,
}

impl BackendArgs {
    fn descriptor(&self) -> recap_core::Result<BackendDescriptor> {
        let mut d = BackendDescriptor::parse(&self.backend)?;
        d.timeout_ms = self.timeout_ms;
        d.max_retries = self.max_retries;
        d.batch_size = self.batch_size;
        d.dim = self.mock_dim;
        d.detections = self.detections.clone();
        d.validate()?;
        Ok(d)
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose {
        tracing_subscriber::filter::LevelFilter::INFO
    } else {
        tracing_subscriber::filter::LevelFilter::WARN
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

/// 1 for bad input, 2 for failures while doing the work.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<recap_core::Error>() {
        Some(e) if e.is_validation() => 1,
        Some(_) => 2,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Filter(a) => commands::filter(a),
        Command::Recaption(a) => commands::recaption(a),
        Command::Mix(a) => commands::mix(a),
        Command::Stats(a) => commands::stats(a),
        Command::Fd(a) => commands::fd(a),
        Command::Embed(a) => commands::embed(a),
        Command::Metrics(m) => metrics::run(m),
        Command::Pipeline(a) => commands::pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
