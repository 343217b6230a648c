mod commands;
mod config;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use config::{Preset, VocoderKind};

/// Label-free emotional text-to-speech: training, synthesis and evaluation.
#[derive(Debug, Parser)]
#[command(name = "etts", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run directory holding the config snapshot and all artifacts.
    #[arg(long, global = true, env = "ETTS_RUN", default_value = "run")]
    pub run: PathBuf,
    /// TOML run configuration. Defaults to the run directory's snapshot, then
    /// to built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Emotion provider: `stub:builtin`, `stub:<lexicon>` or `external:<artifact.jsonl>`.
    #[arg(long, global = true)]
    pub provider: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract mel, duration, pitch and energy features and split the corpus.
    Preprocess {
        /// JSON-lines manifest with `id`, `audio_path`, `text`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory of `<id>.tsv` aligner outputs.
        #[arg(long)]
        alignments: Option<PathBuf>,
    },
    /// Train the acoustic model and style tokens jointly.
    #[command(name = "train-stage1")]
    TrainStage1 {
        /// Optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Utterances per step.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Peak learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Warmup steps of the learning-rate schedule.
        #[arg(long)]
        warmup: Option<usize>,
        /// Model size preset.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Keep training utterances whose dominant emotion is confident enough.
    Prune {
        /// Probability threshold; an utterance is kept when its dominant
        /// probability is strictly greater.
        #[arg(long)]
        pth: Option<f64>,
    },
    /// Pair emotion text embeddings with style weights from the stage-I model.
    #[command(name = "build-pairs")]
    BuildPairs,
    /// Train the text-embedding to style-weight network.
    #[command(name = "train-stage2")]
    TrainStage2 {
        /// Maximum epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Synthesize speech from text alone.
    Synth {
        /// Text to speak.
        #[arg(long)]
        text: String,
        /// Output WAV path; the mel is written next to it as `<stem>.mel.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mel-to-waveform backend.
        #[arg(long, value_enum)]
        vocoder: Option<VocoderKind>,
    },
    /// Objective metrics over externally produced transcripts, labels or audio.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Project style weights and text embeddings to 2-D and plot them.
    Viz {
        /// Output PNG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Character and word error rates.
    Cerwer {
        /// JSON-lines file with `reference` and `hypothesis` (and optional `id`).
        #[arg(long)]
        pairs: PathBuf,
        /// Report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep letter case when comparing.
        #[arg(long)]
        keep_case: bool,
        /// Keep punctuation when comparing.
        #[arg(long)]
        keep_punctuation: bool,
    },
    /// Confusion matrix over four emotion classes.
    Ser {
        /// JSON-lines file with `id`, `true`, `predicted`.
        #[arg(long)]
        labels: PathBuf,
        /// Report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frame-wise F0 contour of a WAV file.
    Pitch {
        /// Input WAV.
        #[arg(long)]
        wav: PathBuf,
        /// Contour CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
