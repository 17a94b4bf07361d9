//! Pipeline driver.
//!
//! Exit codes: 0 success, 2 usage (clap), 3 bad configuration, 4 missing
//! upstream artifact, 5 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand, ValueEnum};

use evgest_cli::run;
use evgest_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "evgest",
    about = "Event-camera microgesture pipeline: synthesize, encode, train, quantize, evaluate",
    version
)]
struct Cli {
    /// TOML configuration; every key has a default, so the file is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact root; beats the EVGEST_OUT_DIR environment variable and the
    /// config file's out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    Float,
    Finetuned,
    Quantized,
}

impl ModelName {
    fn as_str(self) -> &'static str {
        match self {
            ModelName::Float => "float",
            ModelName::Finetuned => "finetuned",
            ModelName::Quantized => "quantized",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TrialSplit {
    Trials,
    TrialsRot,
}

impl TrialSplit {
    fn as_str(self) -> &'static str {
        match self {
            TrialSplit::Trials => "trials",
            TrialSplit::TrialsRot => "trials_rot",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic event-stream dataset.
    Simulate {
        /// Regenerate a single split instead of all of them.
        #[arg(long)]
        only: Option<String>,
    },
    /// Aggregate per-frame labels into window records for training.
    Encode {
        /// Also dump raw time surfaces as one NPY file per sequence.
        #[arg(long)]
        dump_surfaces: bool,
    },
    /// Train the float model from scratch on the train split.
    Train,
    /// Adapt the trained model to the rotated split (stages 1-3 frozen).
    Finetune,
    /// Quantization-aware passes, then export the integer model.
    Qat {
        /// Which float model to start from.
        #[arg(long, value_enum, default_value = "float")]
        from: QatSource,
    },
    /// Score a model against prompted-gesture trials.
    Evaluate {
        #[arg(long, value_enum, default_value = "quantized")]
        model: ModelName,
        #[arg(long, value_enum, default_value = "trials")]
        split: TrialSplit,
    },
    /// Compare float and integer inference latency.
    Bench {
        /// Timed iterations (after warmup); defaults to the config value.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Summarize every artifact in the output directory.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum QatSource {
    Float,
    Finetuned,
}

impl QatSource {
    fn as_str(self) -> &'static str {
        match self {
            QatSource::Float => "float",
            QatSource::Finetuned => "finetuned",
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = PipelineConfig::load(cli.config.as_deref(), cli.out_dir.as_deref())?;
    match cli.command {
        Command::Simulate { only } => run::run_simulate(&config, only.as_deref()),
        Command::Encode { dump_surfaces } => run::run_encode(&config, dump_surfaces),
        Command::Train => run::run_train(&config),
        Command::Finetune => run::run_finetune(&config),
        Command::Qat { from } => run::run_qat(&config, from.as_str()),
        Command::Evaluate { model, split } => {
            run::run_evaluate(&config, model.as_str(), split.as_str())
        }
        Command::Bench { iterations } => run::run_bench(&config, iterations),
        Command::Report => run::run_report(&config),
    }
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ProcessExit::from(err.exit_code() as u8)
        }
    }
}
