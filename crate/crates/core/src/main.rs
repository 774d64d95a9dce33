use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use absa_pair::pipeline::{self, EvalSplit, Overrides, PipelineConfig, PipelineError, Stage};
use absa_pair::AuxMode;

/// Aspect-based sentiment analysis as sentence-pair classification.
#[derive(Parser)]
#[command(name = "absa-pair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "qa-m")]
    QaM,
    #[value(name = "nli-m")]
    NliM,
    #[value(name = "qa-b")]
    QaB,
    #[value(name = "nli-b")]
    NliB,
}

impl From<ModeArg> for AuxMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::QaM => AuxMode::QaM,
            ModeArg::NliM => AuxMode::NliM,
            ModeArg::QaB => AuxMode::QaB,
            ModeArg::NliB => AuxMode::NliB,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::load(&self.config).map_err(|e| e.at(Stage::Config))?;
        cfg.apply(&Overrides {
            mode: self.mode.map(Into::into),
            seed: self.seed,
            out_dir: self.out.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, split and expand the corpus and train the vocabulary.
    Prepare(Common),
    /// Train the configured mode on the prepared training split.
    Train(Common),
    /// Evaluate checkpoints and write Markdown/CSV reports.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (repeatable); defaults to the configured run's final model.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Classify one aspect of one text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        aspect: String,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("ABSA_PAIR_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring ABSA_PAIR_THREADS={v:?} (expected a positive integer)"),
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Prepare(common) => {
            let out = pipeline::cmd_prepare(&common.load()?)?;
            let c = &out.corpus;
            println!(
                "prepared {} instances over {} reviews (positive {}, negative {}, neutral {}); train {}, test {}; vocab {}",
                c.total_instances,
                c.distinct_reviews,
                c.positive,
                c.negative,
                c.neutral,
                out.train.total_instances,
                out.test.total_instances,
                out.vocab_len
            );
            println!("{}", out.paths.dir.display());
        }
        Command::Train(common) => {
            let out = pipeline::cmd_train(&common.load()?)?;
            print!("{}", out.history.to_csv());
            println!("{}", out.checkpoint.display());
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cfg = common.load()?;
            let split = match split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Test => EvalSplit::Test,
            };
            let out = pipeline::cmd_eval(&cfg, &checkpoint, split, common.mode.map(Into::into))?;
            print!("{}", out.markdown);
            println!("{}", out.dir.display());
        }
        Command::Predict {
            checkpoint,
            text,
            aspect,
            mode,
        } => {
            let p = pipeline::cmd_predict(&checkpoint, &text, &aspect, mode.map(Into::into))?;
            print!("{}", p.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
