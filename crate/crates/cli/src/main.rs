mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "vip", version, about = "Video important-person identification")]
pub struct Cli {
    /// JSON config file; flags override it, it overrides defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; falls back to VIP_SEED, then the config file, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with oracle labels.
    Synth(SynthArgs),
    /// Convert an .npz/.json dataset pair into a clip directory.
    Ingest(IngestArgs),
    /// Evaluate a heuristic baseline.
    Baseline(BaselineArgs),
    /// Train a model, or sweep λ_cont.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Rank persons per clip.
    Predict(PredictArgs),
    /// Rank and explain the top person per clip.
    Explain(ExplainArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// spatial, speech, gesture, mixed or decoy.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Render pixels instead of precomputed clarity and motion channels.
    #[arg(long)]
    pub pixels: bool,
    /// Train, val and test fractions, comma separated.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub npz: PathBuf,
    #[arg(long)]
    pub json: PathBuf,
    /// JSON file overriding array and annotation key names.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// centrality, area or clarity.
    #[arg(long)]
    pub cue: String,
    #[arg(long)]
    pub corpus: PathBuf,
    /// train, val or test; all clips when omitted.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lambda_text: Option<f64>,
    #[arg(long)]
    pub lambda_cont: Option<f64>,
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    #[arg(long)]
    pub tau_cont: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated λ_cont values; trains once per value.
    #[arg(long)]
    pub sweep_lambda_cont: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Frames per clip written as annotated PNG overlays.
    #[arg(long)]
    pub overlays: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// baseline, unguided or guided.
    #[arg(long, default_value = "guided")]
    pub mode: String,
    /// mock or http.
    #[arg(long, default_value = "mock")]
    pub client: String,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
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
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("VIP_LOG")
        .init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
