use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{train_run, CodeTables, Dataset, RunReport};
use crate::codeembed::{
    embed_codes, raw_code_table, train_classifier, ClassifierConfig, ClassifierReport,
    CodeClassifier, CodeSample, PretrainedTokens,
};
use crate::datamodel::Corpus;
use crate::error::{Error, Result};

/// Per-seed runs of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<RunReport>,
    pub per_seed_auc: Vec<f64>,
    pub mean_auc: f64,
    pub mean_final_auc: f64,
}

impl EvalReport {
    pub fn from_runs(runs: Vec<RunReport>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Metric("no runs to average".into()));
        }
        let per_seed_auc: Vec<f64> = runs.iter().map(|r| r.auc).collect();
        let n = runs.len() as f64;
        let mean_auc = per_seed_auc.iter().sum::<f64>() / n;
        let mean_final_auc = runs.iter().map(|r| r.final_auc).sum::<f64>() / n;
        Ok(EvalReport {
            runs,
            per_seed_auc,
            mean_auc,
            mean_final_auc,
        })
    }
}

/// Trains every seed of `cfg`, calling `progress` after each run.
pub fn train_seeds(
    cfg: &TrainConfig,
    data: &Dataset,
    tables: &CodeTables,
    mut progress: impl FnMut(&RunReport),
) -> Result<EvalReport> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let out = train_run(cfg, data, tables, seed)?;
        progress(&out.report);
        runs.push(out.report);
    }
    EvalReport::from_runs(runs)
}

/// Trained code pipeline for one corpus.
pub struct CodePipeline {
    pub classifier: CodeClassifier,
    pub tokens: PretrainedTokens,
    pub report: ClassifierReport,
    pub tables: CodeTables,
}

/// Trains the verdict classifier on the kept submissions and embeds every one
/// of them twice: classifier features and mean-pooled pre-trained tokens.
pub fn build_code_pipeline(
    corpus: &Corpus,
    data: &Dataset,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<CodePipeline> {
    let kept: std::collections::HashSet<u64> = data.submission_ids().into_iter().collect();
    let events: Vec<_> = corpus
        .events
        .iter()
        .filter(|e| kept.contains(&e.id))
        .cloned()
        .collect();
    let samples = CodeSample::from_events(&events);
    let (classifier, tokens, report) = train_classifier(&samples, cfg, seed)?;
    let items = || samples.iter().map(|s| (s.id, s.code.as_str()));
    let tables = CodeTables {
        classified: Some(embed_codes(&classifier, items())?),
        raw: Some(raw_code_table(&tokens, items(), cfg.max_len)?),
    };
    Ok(CodePipeline {
        classifier,
        tokens,
        report,
        tables,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCode,
    NoProblem,
    NoClassification,
    Node2vec,
    LiteralRecurrence,
    NoPastResponse,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoCode,
        Variant::NoProblem,
        Variant::NoClassification,
        Variant::Node2vec,
        Variant::LiteralRecurrence,
        Variant::NoPastResponse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCode => "no_code",
            Variant::NoProblem => "no_problem",
            Variant::NoClassification => "no_classification",
            Variant::Node2vec => "node2vec",
            Variant::LiteralRecurrence => "literal_recurrence",
            Variant::NoPastResponse => "no_past_response",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {name:?}")))
    }

    /// `base` with this variant's single change applied.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoCode => c.dsm.no_code = true,
            Variant::NoProblem => c.dsm.no_problem = true,
            Variant::NoClassification => c.no_classification = true,
            Variant::Node2vec => c.node2vec = true,
            Variant::LiteralRecurrence => c.dsm.literal_recurrence = true,
            Variant::NoPastResponse => c.dsm.no_past_response = true,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
}

pub fn run_ablations(
    base: &TrainConfig,
    data: &Dataset,
    tables: &CodeTables,
    variants: &[Variant],
    mut progress: impl FnMut(Variant, &RunReport),
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let report = train_seeds(&v.apply(base), data, tables, |r| progress(v, r))?;
            Ok(AblationRow { variant: v, report })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub attention_enabled: bool,
    pub seed: u64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub lambda: f64,
    pub attention_enabled: bool,
    pub mean_auc: f64,
}

/// Trains every `(λ, mode, seed)` combination.
pub fn sweep_lambda(
    base: &TrainConfig,
    data: &Dataset,
    tables: &CodeTables,
    lambdas: &[f64],
    modes: &[bool],
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(lambdas.len() * modes.len() * base.seeds.len());
    for &lambda in lambdas {
        for &attention_enabled in modes {
            let mut cfg = base.clone();
            cfg.dsm.lambda = lambda;
            cfg.dsm.attention_enabled = attention_enabled;
            for &seed in &base.seeds {
                let out = train_run(&cfg, data, tables, seed)?;
                let row = SweepRow {
                    lambda,
                    attention_enabled,
                    seed,
                    auc: out.report.auc,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mean AUC per `(λ, mode)` in first-seen order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut order: Vec<(u64, bool)> = Vec::new();
    let mut acc: HashMap<(u64, bool), (f64, usize)> = HashMap::new();
    for r in rows {
        let key = (r.lambda.to_bits(), r.attention_enabled);
        let slot = acc.entry(key).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        slot.0 += r.auc;
        slot.1 += 1;
    }
    order
        .into_iter()
        .map(|k| {
            let (sum, n) = acc[&k];
            SweepSummary {
                lambda: f64::from_bits(k.0),
                attention_enabled: k.1,
                mean_auc: sum / n as f64,
            }
        })
        .collect()
}

/// CSV with columns `lambda,mode,seed,auc`; mode is `attention` or `decay_only`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,mode,seed,auc\n");
    for r in rows {
        let mode = if r.attention_enabled {
            "attention"
        } else {
            "decay_only"
        };
        out.push_str(&format!("{},{mode},{},{}\n", r.lambda, r.seed, r.auc));
    }
    out
}
