use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Hierarchical multi-spectral activity recognition toolkit.
#[derive(Parser, Debug)]
#[command(name = "hppi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelPaths {
    /// First-stage model file
    #[arg(long)]
    pub first: Option<PathBuf>,
    /// Moving-activity model file
    #[arg(long)]
    pub plmn: Option<PathBuf>,
    /// Stationary model file (needs --first for its shared layers)
    #[arg(long)]
    pub stationary: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (train/val/test CSV streams)
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one module on a synthetic dataset
    Train {
        #[command(flatten)]
        common: Common,
        /// first | plmn | stationary
        #[arg(long)]
        module: String,
        /// PLMN variant: full | no_attention | fft | wt | gt | plcn
        #[arg(long, default_value = "full")]
        variant: String,
        /// Dataset directory written by `synth`
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Test-split accuracy and confusion matrix
    Eval {
        #[command(flatten)]
        common: Common,
        /// first | plmn | stationary | system
        #[arg(long)]
        module: String,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Quantize a trained module to int8 weights
    Quantize {
        #[command(flatten)]
        common: Common,
        /// first | plmn | stationary
        #[arg(long)]
        module: String,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Per-module and expected system RAM/ROM/MACC/accuracy
    Resources {
        #[command(flatten)]
        common: Common,
        /// Probability that a window goes to the moving-activity model
        #[arg(long)]
        p: Option<f64>,
        /// Count ROM with int8 weights
        #[arg(long)]
        quantized: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Run the two-stage pipeline over a stream and log residency events
    Stream {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (for channel statistics)
        #[arg(long)]
        data: PathBuf,
        /// 50 Hz CSV recording to replay; a random mixed stream otherwise
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Branch and axis attribution report for a moving-activity model
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Train every moving-activity variant and tabulate accuracy and ROM
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Usage errors exit with 1, data and model errors with 2.
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Train { common, module, variant, data, models } => commands::train(&common, &module, &variant, &data, &models),
        Command::Eval { common, module, data, models } => commands::eval(&common, &module, &data, &models),
        Command::Quantize { common, module, data, models } => commands::quantize(&common, &module, &data, &models),
        Command::Resources { common, p, quantized, data, models } => {
            commands::resources(&common, p, quantized, data.as_deref(), &models)
        }
        Command::Stream { common, data, input, models } => commands::stream(&common, &data, input.as_deref(), &models),
        Command::Explain { common, data, models } => commands::explain(&common, &data, &models),
        Command::Ablate { common, data } => commands::ablate(&common, &data),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
