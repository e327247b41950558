mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "seqcat", version, about = "Identity-preserving video diffusion on synthetic glyph clips")]
pub struct Cli {
    /// Run directory holding every artifact of one experiment.
    #[arg(long, env = "SEQCAT_RUN_DIR", default_value = "runs/default", global = true)]
    pub run_dir: PathBuf,
    /// TOML config; defaults to `<run-dir>/config.toml`, then built-ins.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `section.key=value` (repeatable).
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Re-seed corpus, model, plans and sampler.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic corpus into `<run-dir>/corpus`.
    Synth,
    /// Sweep the identity-embedder noise scale on the corpus.
    Calibrate,
    /// Filter clips, extract references and build every pair set.
    Curate(CurateArgs),
    /// Run the training regimen; one checkpoint per plan under `train/`.
    Train,
    /// Generate one clip from a checkpoint.
    Sample(SampleArgs),
    /// Score a checkpoint on held-out probes.
    Eval(EvalArgs),
    /// Merge every evaluation and repro report of the run into one table.
    Report,
    /// End-to-end experiments.
    Repro(ReproArgs),
    /// Print the effective config as TOML.
    Config,
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    /// Use this identity-embedder noise scale instead of calibrating.
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Defaults to the last plan's checkpoint under `train/`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Curated reference id (repeatable; order is slot order).
    #[arg(long = "ref-id")]
    pub ref_ids: Vec<String>,
    /// Held-out probe index, used when no `--ref-id` is given.
    #[arg(long, default_value_t = 0)]
    pub probe: usize,
    /// Use two-subject probes.
    #[arg(long)]
    pub two_subjects: bool,
    /// Caption; defaults to the probe's or reference clip's caption.
    #[arg(long)]
    pub caption: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance_text: Option<f64>,
    #[arg(long)]
    pub guidance_image: Option<f64>,
    #[arg(long, default_value = "sample")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Row tag and output directory name under `eval/`.
    #[arg(long, default_value = "eval")]
    pub tag: String,
    #[arg(long, value_enum, default_value_t = ProbeKind::Single)]
    pub probes: ProbeKind,
    /// Defaults to the calibrated scale recorded by `curate`.
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    Single,
    Multi,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// Guidance pairs `text:image,...` for the guidance sweep.
    #[arg(long, default_value = "1:1,3:1,6:1,6:2")]
    pub scales: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Three-stage regimen with held-out evaluation after each stage.
    StageOrdering,
    /// Two-identity training from the single-identity model vs scratch.
    Transfer,
    /// Reference-order swap on two-subject scenes.
    Order,
    /// Memorise a four-clip corpus.
    Overfit,
    /// Evaluate the final stage-ordering model under several guidance scales.
    Guidance,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let precondition = err
        .chain()
        .filter_map(|e| e.downcast_ref::<seqcat::Error>())
        .any(seqcat::Error::is_precondition);
    if precondition {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
