use std::path::Path;

use anyhow::{Context, Result};
use pdkt::datamodel::{synth_generate, Corpus, MIN_SUBMISSIONS};
use pdkt::embedding::EmbeddingTable;
use pdkt::graphembed::{gat_embed, init_gat_params, node2vec_embed, warmup_edge_prediction};
use pdkt::trainer::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{Layout, RunConfig};

/// Line-delimited JSON report: a header with the effective configuration,
/// then one record per row.
struct Report {
    lines: Vec<String>,
}

impl Report {
    fn new(stage: &str, config: &RunConfig) -> Result<Self> {
        let head = json!({ "stage": stage, "config": config });
        Ok(Report {
            lines: vec![serde_json::to_string(&head)?],
        })
    }

    fn row(&mut self, kind: &str, body: impl Serialize) -> Result<()> {
        self.lines.push(serde_json::to_string(
            &json!({ "record": kind, "data": body }),
        )?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?;
        println!("report: {}", path.display());
        Ok(())
    }
}

fn load_corpus(layout: &Layout) -> Result<Corpus> {
    Corpus::load(&layout.data).with_context(|| {
        format!(
            "loading corpus from {} (run `pdkt synth` or `pdkt ingest` first)",
            layout.data.display()
        )
    })
}

fn load_dataset(layout: &Layout) -> Result<(Corpus, Dataset)> {
    let corpus = load_corpus(layout)?;
    let data = Dataset::from_corpus(&corpus, MIN_SUBMISSIONS)?;
    Ok((corpus, data))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(pdkt::Error::MissingArtifact(format!(
            "{} (produced by `pdkt {producer}`)",
            path.display()
        ))
        .into())
    }
}

/// Code tables a training configuration reads; missing files are named.
fn load_tables(layout: &Layout, cfg: &TrainConfig) -> Result<CodeTables> {
    let mut tables = CodeTables::default();
    if cfg.dsm.no_code {
        // The code width of a no-code run still follows the classifier table when present.
        if layout.classified_codes().exists() {
            tables.classified = Some(EmbeddingTable::read_text(&layout.classified_codes())?);
        }
        return Ok(tables);
    }
    if cfg.no_classification {
        require(&layout.raw_codes(), "pretrain-code")?;
        tables.raw = Some(EmbeddingTable::read_text(&layout.raw_codes())?);
    } else {
        require(&layout.classified_codes(), "pretrain-code")?;
        tables.classified = Some(EmbeddingTable::read_text(&layout.classified_codes())?);
    }
    Ok(tables)
}

/// Tables for every variant of an ablation: all that exist, after checking
/// that each variant's own table is present.
fn load_all_tables(layout: &Layout, configs: &[TrainConfig]) -> Result<CodeTables> {
    let mut tables = CodeTables::default();
    for c in configs {
        let t = load_tables(layout, c)?;
        tables.classified = tables.classified.or(t.classified);
        tables.raw = tables.raw.or(t.raw);
    }
    Ok(tables)
}

pub fn synth(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let corpus = synth_generate(&cfg.synth, cfg.seed)?;
    std::fs::create_dir_all(&layout.data)?;
    corpus.save(&layout.data)?;
    let data = Dataset::from_corpus(&corpus, MIN_SUBMISSIONS)?;
    println!(
        "synthesised {} events from {} users over {} problems; {} students kept",
        corpus.events.len(),
        corpus.roles.len(),
        corpus.kb.problems.len(),
        data.sequences.len()
    );
    println!("data: {}", layout.data.display());
    let mut report = Report::new("synth", cfg)?;
    report.row("filter", &data.filter)?;
    report.write(&layout.report("synth"))
}

pub fn ingest(cfg: &RunConfig, layout: &Layout, from: &Path) -> Result<()> {
    let corpus = Corpus::load(from).with_context(|| format!("ingesting {}", from.display()))?;
    let data = Dataset::from_corpus(&corpus, MIN_SUBMISSIONS)?;
    let same = std::fs::canonicalize(from).ok() == std::fs::canonicalize(&layout.data).ok();
    if !same {
        corpus.save(&layout.data)?;
    }
    let f = &data.filter;
    println!(
        "{} events: removed {} users ({} events) without a student role, {} students ({} events) below {} submissions; kept {} students, {} events",
        f.input_events,
        f.non_student_users,
        f.non_student_events,
        f.short_users,
        f.short_events,
        MIN_SUBMISSIONS,
        f.kept_users,
        f.kept_events
    );
    let mut report = Report::new("ingest", cfg)?;
    report.row("source", json!({ "path": from.display().to_string() }))?;
    report.row("filter", f)?;
    report.write(&layout.report("ingest"))
}

pub fn embed_problems(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let (_, data) = load_dataset(layout)?;
    let t = &cfg.train;
    let (method, table) = if t.node2vec {
        (
            "node2vec",
            node2vec_embed(&data.graph, &t.node2vec_effective(), cfg.seed)?,
        )
    } else {
        t.gat.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = init_gat_params(&t.gat, &data.kb, &mut rng)?;
        if let Some(warm) = &t.gat_warmup {
            warmup_edge_prediction(&data.graph, &t.gat, &mut params, warm, rng.gen())?;
        }
        ("graph-attention", gat_embed(&data.graph, &t.gat, &params)?)
    };
    table.write_text(&layout.problems())?;
    println!(
        "{method} embeddings: {} problems x {} dims -> {}",
        table.len(),
        table.dim(),
        layout.problems().display()
    );
    let mut report = Report::new("embed-problems", cfg)?;
    report.row(
        "table",
        json!({ "method": method, "rows": table.len(), "dim": table.dim() }),
    )?;
    report.write(&layout.report("embed-problems"))
}

pub fn pretrain_code(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let (corpus, data) = load_dataset(layout)?;
    let pipe = build_code_pipeline(&corpus, &data, &cfg.classifier, cfg.seed)?;
    pipe.classifier.save(&layout.classifier())?;
    for (table, path) in [
        (&pipe.tables.classified, layout.classified_codes()),
        (&pipe.tables.raw, layout.raw_codes()),
    ] {
        table
            .as_ref()
            .expect("pipeline builds both tables")
            .write_text(&path)?;
    }
    let r = &pipe.report;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:?}-class classifier: held-out accuracy {} (majority baseline {}) on {} test / {} train codes",
        r.mode,
        fmt(r.accuracy),
        fmt(r.majority_baseline),
        r.test_size,
        r.train_size
    );
    println!("artifacts: {}", layout.artifacts.display());
    let mut report = Report::new("pretrain-code", cfg)?;
    report.row("classifier", r)?;
    report.write(&layout.report("pretrain-code"))
}

fn print_run(prefix: &str, r: &RunReport) {
    eprintln!(
        "{prefix}seed {}: best AUC {:.4} (epoch {}), final AUC {:.4}",
        r.seed,
        r.auc,
        r.best_epoch + 1,
        r.final_auc
    );
}

pub fn train(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    cfg.train.validate()?;
    let (_, data) = load_dataset(layout)?;
    let tables = load_tables(layout, &cfg.train)?;
    let mut report = Report::new("train", cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.train.seeds {
        let out = train_run(&cfg.train, &data, &tables, seed)?;
        let path = layout.checkpoint(seed);
        out.checkpoint.save(&path)?;
        print_run("", &out.report);
        report.row(
            "run",
            json!({ "checkpoint": path.display().to_string(), "report": &out.report }),
        )?;
        runs.push(out.report);
    }
    let eval = EvalReport::from_runs(runs)?;
    println!("seed  best_auc  final_auc");
    for r in &eval.runs {
        println!("{:>4}  {:.4}    {:.4}", r.seed, r.auc, r.final_auc);
    }
    println!("mean  {:.4}    {:.4}", eval.mean_auc, eval.mean_final_auc);
    report.row("summary", json!({ "per_seed_auc": eval.per_seed_auc, "mean_auc": eval.mean_auc, "mean_final_auc": eval.mean_final_auc }))?;
    report.write(&layout.report("train"))
}

pub fn eval(cfg: &RunConfig, layout: &Layout, checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (_, data) = load_dataset(layout)?;
    let tables = load_tables(layout, &ckpt.config)?;
    let (auc, preds, _) = evaluate(&ckpt, &data, &tables)?;
    println!(
        "seed {}: test AUC {auc} over {} targets",
        ckpt.seed,
        preds.len()
    );
    let effective = RunConfig {
        train: ckpt.config.clone(),
        ..cfg.clone()
    };
    let mut report = Report::new("eval", &effective)?;
    report.row(
        "eval",
        json!({ "checkpoint": checkpoint.display().to_string(), "seed": ckpt.seed, "auc": auc, "targets": preds.len() }),
    )?;
    report.write(&layout.report("eval"))
}

pub fn ablate(cfg: &RunConfig, layout: &Layout, variants: &[Variant]) -> Result<()> {
    cfg.train.validate()?;
    let (_, data) = load_dataset(layout)?;
    let configs: Vec<TrainConfig> = variants.iter().map(|v| v.apply(&cfg.train)).collect();
    for c in &configs {
        c.validate()?;
    }
    let tables = load_all_tables(layout, &configs)?;
    let rows = run_ablations(&cfg.train, &data, &tables, variants, |v, r| {
        print_run(&format!("{}: ", v.name()), r)
    })?;
    let mut report = Report::new("ablate", cfg)?;
    println!("{:<20} {:>9}", "variant", "mean_auc");
    for row in &rows {
        println!("{:<20} {:>9.4}", row.variant.name(), row.report.mean_auc);
        report.row(
            "variant",
            json!({ "variant": row.variant, "per_seed_auc": row.report.per_seed_auc, "mean_auc": row.report.mean_auc, "runs": row.report.runs }),
        )?;
    }
    report.write(&layout.report("ablate"))
}

pub fn sweep(cfg: &RunConfig, layout: &Layout, lambdas: &[f64], modes: &[bool]) -> Result<()> {
    cfg.train.validate()?;
    if lambdas.is_empty() || modes.is_empty() {
        return Err(
            pdkt::Error::Config("sweep needs at least one lambda and one mode".into()).into(),
        );
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(pdkt::Error::Config(format!(
            "lambda must be finite and non-negative, got {bad}"
        ))
        .into());
    }
    let (_, data) = load_dataset(layout)?;
    let tables = load_tables(layout, &cfg.train)?;
    let rows = sweep_lambda(&cfg.train, &data, &tables, lambdas, modes, |r| {
        eprintln!(
            "lambda {} {}: seed {} AUC {:.4}",
            r.lambda,
            mode_name(r.attention_enabled),
            r.seed,
            r.auc
        )
    })?;
    let csv_path = layout.reports.join("sweep.csv");
    std::fs::create_dir_all(&layout.reports)?;
    std::fs::write(&csv_path, sweep_csv(&rows))?;
    println!("csv: {}", csv_path.display());

    let mut report = Report::new("sweep", cfg)?;
    for r in &rows {
        report.row("run", r)?;
    }
    let summary = summarize_sweep(&rows);
    println!("{:>8} {:<10} {:>9}", "lambda", "mode", "mean_auc");
    for s in &summary {
        println!(
            "{:>8} {:<10} {:>9.4}",
            s.lambda,
            mode_name(s.attention_enabled),
            s.mean_auc
        );
        report.row("summary", s)?;
    }
    report.write(&layout.report("sweep"))
}

fn mode_name(attention: bool) -> &'static str {
    if attention {
        "attention"
    } else {
        "decay_only"
    }
}
