use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use bond::pipeline::{self, Overrides, PipelineConfig};
use bond::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "bond", version, about = "Distantly supervised NER: label, train, self-train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `paths.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Hyperparameter preset overlaid on the config.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Distant-label the training corpus.
    Label(Common),
    /// Stage I: fit the distant labels for a fixed number of steps.
    Train(Common),
    /// Stage II: teacher-student self-training.
    Selftrain {
        #[command(flatten)]
        common: Common,
        /// Starting checkpoint (default: the Stage I output).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on a gold corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score (default: the Stage II output).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Gold corpus (default: `paths.test`).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run every phase and write a summary.
    Pipeline(Common),
    /// Write a synthetic dataset and config.
    Demo {
        /// Directory to write the dataset and `config.json` into.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed, also written as the config seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load(c: &Common) -> bond::Result<PipelineConfig> {
    PipelineConfig::load(
        &c.config,
        &Overrides {
            out: c.out.clone(),
            seed: c.seed,
            preset: c.preset.clone(),
        },
    )
}

fn run(cli: Cli) -> bond::Result<()> {
    match cli.command {
        Command::Label(c) => {
            if let Some(r) = pipeline::cmd_label(&load(&c)?)? {
                println!(
                    "distant labels: F1 {:.2} (token precision {:.2}, token recall {:.2})",
                    100.0 * r.f1,
                    100.0 * r.token_precision,
                    100.0 * r.token_recall
                );
            }
        }
        Command::Train(c) => {
            let r = pipeline::cmd_train(&load(&c)?)?;
            println!("stage I: {} steps", r.steps);
        }
        Command::Selftrain { common, checkpoint } => {
            let r = pipeline::cmd_selftrain(&load(&common)?, checkpoint.as_deref())?;
            println!(
                "stage II: {} teacher updates, {} student updates",
                r.teacher_updates, r.student_updates
            );
        }
        Command::Eval {
            common,
            checkpoint,
            corpus,
        } => {
            let m = pipeline::cmd_eval(&load(&common)?, checkpoint.as_deref(), corpus.as_deref())?;
            println!("{}", m.summary_line());
        }
        Command::Pipeline(c) => print!("{}", pipeline::cmd_pipeline(&load(&c)?)?.to_text()),
        Command::Demo { out, seed } => {
            let path = pipeline::cmd_demo(&out, seed, &SynthConfig::default())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("BOND_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("BOND_THREADS: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
