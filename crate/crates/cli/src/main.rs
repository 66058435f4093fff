mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdkt::trainer::Variant;

use config::{ClassifierFlags, Layout, RunConfig, SynthFlags, TrainFlags};

/// Bad flags or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "pdkt",
    version,
    about = "Programming knowledge tracing pipeline"
)]
struct Cli {
    /// Working directory holding data/, artifacts/ and reports/.
    #[arg(long, global = true, env = "PDKT_DATA_DIR", default_value = ".")]
    dir: PathBuf,
    /// TOML run configuration (JSON if the extension is .json); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis, code pre-training and problem embedding.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic online-judge corpus into data/.
    Synth {
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Validate and filter an external corpus directory and copy it into data/.
    Ingest {
        /// Directory with problems, concepts, events and roles JSONL files.
        #[arg(long)]
        from: PathBuf,
    },
    /// Embed problems with the graph encoder (or node2vec) into artifacts/problems.emb.
    EmbedProblems {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Pre-train token vectors and the verdict classifier; write code embedding tables.
    PretrainCode {
        #[command(flatten)]
        classifier: ClassifierFlags,
    },
    /// Train one checkpoint per seed and report test AUC.
    Train {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Re-evaluate a saved checkpoint on its own test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train each ablation variant over the configured seeds.
    Ablate {
        #[command(flatten)]
        train: TrainFlags,
        /// Comma-separated variants (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Sweep the decay rate with attention on and off.
    Sweep {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.6,1,2,30")]
        lambdas: Vec<f64>,
        #[arg(long, value_enum, default_value = "both")]
        modes: ModesArg,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ModesArg {
    Both,
    Attention,
    DecayOnly,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let layout = Layout::new(&cli.dir);
    match cli.command {
        Command::Synth { synth } => {
            synth.apply(&mut cfg.synth);
            commands::synth(&cfg, &layout)
        }
        Command::Ingest { from } => commands::ingest(&cfg, &layout, &from),
        Command::EmbedProblems { train } => {
            train.apply(&mut cfg.train);
            commands::embed_problems(&cfg, &layout)
        }
        Command::PretrainCode { classifier } => {
            classifier.apply(&mut cfg.classifier);
            commands::pretrain_code(&cfg, &layout)
        }
        Command::Train { train } => {
            train.apply(&mut cfg.train);
            commands::train(&cfg, &layout)
        }
        Command::Eval { checkpoint } => commands::eval(&cfg, &layout, &checkpoint),
        Command::Ablate { train, variants } => {
            train.apply(&mut cfg.train);
            let variants = match variants {
                None => Variant::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| Variant::parse(n))
                    .collect::<pdkt::Result<_>>()?,
            };
            commands::ablate(&cfg, &layout, &variants)
        }
        Command::Sweep {
            train,
            lambdas,
            modes,
        } => {
            train.apply(&mut cfg.train);
            let modes = match modes {
                ModesArg::Both => vec![true, false],
                ModesArg::Attention => vec![true],
                ModesArg::DecayOnly => vec![false],
            };
            commands::sweep(&cfg, &layout, &lambdas, &modes)
        }
    }
}

/// 1 usage/config, 2 data, 3 numeric divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<pdkt::Error>() {
        Some(pdkt::Error::Config(_)) => 1,
        Some(pdkt::Error::Divergence(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
