use std::path::{Path, PathBuf};

use pdkt::codeembed::{ClassMode, ClassifierConfig, Encoder};
use pdkt::datamodel::SynthConfig;
use pdkt::numkernel::DecayForm;
use pdkt::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Everything a stage needs. Loaded from TOML (or JSON, e.g. the `config`
/// object embedded in any report), then overridden by command-line flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for corpus synthesis, the code pipeline and problem embedding.
    pub seed: u64,
    pub synth: SynthConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))
    }
}

/// Directory layout under the working directory.
pub struct Layout {
    pub data: PathBuf,
    pub artifacts: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            data: root.join("data"),
            artifacts: root.join("artifacts"),
            reports: root.join("reports"),
        }
    }

    pub fn problems(&self) -> PathBuf {
        self.artifacts.join("problems.emb")
    }

    pub fn classifier(&self) -> PathBuf {
        self.artifacts.join("code-classifier.pdkt")
    }

    pub fn classified_codes(&self) -> PathBuf {
        self.artifacts.join("codes-classified.emb")
    }

    pub fn raw_codes(&self) -> PathBuf {
        self.artifacts.join("codes-raw.emb")
    }

    pub fn checkpoint(&self, seed: u64) -> PathBuf {
        self.artifacts
            .join("checkpoints")
            .join(format!("seed-{seed}.pdkt"))
    }

    pub fn report(&self, stage: &str) -> PathBuf {
        self.reports.join(format!("{stage}.jsonl"))
    }
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct SynthFlags {
    /// Students kept after filtering.
    #[arg(long)]
    pub students: Option<usize>,
    #[arg(long)]
    pub problems: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
}

impl SynthFlags {
    pub fn apply(&self, c: &mut SynthConfig) {
        set(&mut c.students, self.students);
        set(&mut c.problems, self.problems);
        set(&mut c.concepts, self.concepts);
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Two,
    Nine,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum EncoderArg {
    Conv,
    MeanPool,
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct ClassifierFlags {
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub encoder: Option<EncoderArg>,
    /// Classifier training epochs.
    #[arg(long = "classifier-epochs")]
    pub epochs: Option<usize>,
    /// Width of the code embedding.
    #[arg(long)]
    pub code_dim: Option<usize>,
    #[arg(long)]
    pub max_train_samples: Option<usize>,
}

impl ClassifierFlags {
    pub fn apply(&self, c: &mut ClassifierConfig) {
        if let Some(m) = self.mode {
            c.mode = match m {
                ModeArg::Two => ClassMode::Two,
                ModeArg::Nine => ClassMode::Nine,
            };
        }
        if let Some(e) = self.encoder {
            c.encoder = match e {
                EncoderArg::Conv => Encoder::Conv,
                EncoderArg::MeanPool => Encoder::MeanPool,
            };
        }
        set(&mut c.epochs, self.epochs);
        set(&mut c.code_dim, self.code_dim);
        if self.max_train_samples.is_some() {
            c.max_train_samples = self.max_train_samples;
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum DecayFormArg {
    Additive,
    Multiplicative,
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Window length.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Recurrent state width.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Width of every graph-attention layer (input, hidden and output).
    #[arg(long)]
    pub problem_dim: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub decay_form: Option<DecayFormArg>,
    /// Replace similarity scores by a constant, leaving pure recency weights.
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub node2vec: bool,
    #[arg(long)]
    pub no_code: bool,
    #[arg(long)]
    pub no_problem: bool,
    #[arg(long)]
    pub no_classification: bool,
    #[arg(long)]
    pub literal_recurrence: bool,
    #[arg(long)]
    pub no_past_response: bool,
    #[arg(long)]
    pub freeze_problem_embeddings: bool,
}

impl TrainFlags {
    pub fn apply(&self, c: &mut TrainConfig) {
        set(&mut c.epochs, self.epochs);
        set(&mut c.lr, self.lr);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.seq_len, self.seq_len);
        set(&mut c.seeds, self.seeds.clone());
        set(&mut c.dsm.hidden_dim, self.hidden_dim);
        if let Some(d) = self.problem_dim {
            c.gat.input_dim = d;
            c.gat.hidden_dim = d;
            c.gat.output_dim = d;
        }
        set(&mut c.dsm.lambda, self.lambda);
        if let Some(f) = self.decay_form {
            c.dsm.decay_form = match f {
                DecayFormArg::Additive => DecayForm::Additive,
                DecayFormArg::Multiplicative => DecayForm::Multiplicative,
            };
        }
        let on = |flag: bool, field: &mut bool| *field |= flag;
        if self.no_attention {
            c.dsm.attention_enabled = false;
        }
        on(self.node2vec, &mut c.node2vec);
        on(self.no_code, &mut c.dsm.no_code);
        on(self.no_problem, &mut c.dsm.no_problem);
        on(self.no_classification, &mut c.no_classification);
        on(self.literal_recurrence, &mut c.dsm.literal_recurrence);
        on(self.no_past_response, &mut c.dsm.no_past_response);
        on(
            self.freeze_problem_embeddings,
            &mut c.freeze_problem_embeddings,
        );
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}
