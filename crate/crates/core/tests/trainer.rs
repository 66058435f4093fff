use std::collections::HashSet;

use pdkt::codeembed::ClassifierConfig;
use pdkt::datamodel::{synth_generate, SynthConfig, MIN_SUBMISSIONS};
use pdkt::dsm::DsmConfig;
use pdkt::graphembed::GatConfig;
use pdkt::trainer::*;
use pdkt::Error;

fn corpus(students: usize, seed: u64) -> pdkt::datamodel::Corpus {
    let cfg = SynthConfig {
        students,
        short_students: 3,
        staff: 2,
        max_submissions: 60,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, seed).unwrap()
}

fn tiny_classifier() -> ClassifierConfig {
    ClassifierConfig {
        token_dim: 8,
        feature_maps: 8,
        code_dim: 8,
        windows: vec![3, 5],
        epochs: 1,
        batch_size: 32,
        lr: 5e-3,
        ..ClassifierConfig::default()
    }
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 3e-3,
        seq_len: 40,
        seeds: vec![0],
        dsm: DsmConfig {
            hidden_dim: 8,
            ..DsmConfig::default()
        },
        gat: GatConfig {
            input_dim: 8,
            hidden_dim: 8,
            output_dim: 8,
            ..GatConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct Fixture {
    data: Dataset,
    tables: CodeTables,
}

fn fixture(students: usize) -> Fixture {
    let c = corpus(students, 3);
    let data = Dataset::from_corpus(&c, MIN_SUBMISSIONS).unwrap();
    let pipe = build_code_pipeline(&c, &data, &tiny_classifier(), 5).unwrap();
    Fixture {
        data,
        tables: pipe.tables,
    }
}

#[test]
fn smoke_one_epoch_on_ten_students() {
    let f = fixture(10);
    assert_eq!(f.data.sequences.len(), 10);
    let out = train_run(&tiny_train(1), &f.data, &f.tables, 0).unwrap();
    let r = &out.report;
    assert_eq!(r.epochs.len(), 1);
    assert!(r.epochs[0].train_loss.is_finite() && r.epochs[0].train_loss > 0.0);
    assert!((0.0..=1.0).contains(&r.auc));
    assert_eq!(r.train_students + r.test_students, 10);
    assert!(r.first_epoch_batch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn same_seed_gives_identical_reports_and_checkpoints() {
    let f = fixture(12);
    let cfg = TrainConfig {
        seeds: vec![4, 9],
        ..tiny_train(2)
    };
    let a = train_seeds(&cfg, &f.data, &f.tables, |_| {}).unwrap();
    let b = train_seeds(&cfg, &f.data, &f.tables, |_| {}).unwrap();
    assert_eq!(a, b);
    let x = train_run(&cfg, &f.data, &f.tables, 4).unwrap();
    let y = train_run(&cfg, &f.data, &f.tables, 4).unwrap();
    assert_eq!(x.checkpoint, y.checkpoint);
    let mean = a.per_seed_auc.iter().sum::<f64>() / 2.0;
    assert_eq!(a.mean_auc, mean);
}

#[test]
fn split_is_by_student_without_overlap() {
    let f = fixture(25);
    let cfg = tiny_train(1);
    for seed in 0..10 {
        let (train, test) = split_user_ids(&f.data, &cfg, seed).unwrap();
        assert_eq!(train.len() + test.len(), 25);
        assert_eq!(test.len(), 5);
        let a: HashSet<_> = train.iter().collect();
        assert!(test.iter().all(|u| !a.contains(u)));
    }
}

#[test]
fn first_epoch_loss_goes_down_in_most_seeds() {
    let f = fixture(60);
    let cfg = TrainConfig {
        batch_size: 4,
        seeds: vec![0, 1, 2, 3, 4],
        ..tiny_train(1)
    };
    let report = train_seeds(&cfg, &f.data, &f.tables, |_| {}).unwrap();
    let decreasing = report
        .runs
        .iter()
        .filter(|r| {
            let l = &r.first_epoch_batch_losses;
            let q = (l.len() / 4).max(1);
            let head = l[..q].iter().sum::<f64>() / q as f64;
            let tail = l[l.len() - q..].iter().sum::<f64>() / q as f64;
            tail <= head
        })
        .count();
    assert!(decreasing >= 4, "loss fell in only {decreasing} of 5 seeds");
}

#[test]
fn exploding_updates_abort_with_divergence() {
    let f = fixture(10);
    let cfg = TrainConfig {
        lr: 1e308,
        ..tiny_train(3)
    };
    match train_run(&cfg, &f.data, &f.tables, 0) {
        Err(Error::Divergence(_)) => {}
        Err(e) => panic!("expected divergence, got {e}"),
        Ok(_) => panic!("expected divergence"),
    }
}

#[test]
fn evaluate_reproduces_final_auc_after_reload() {
    let f = fixture(12);
    let out = train_run(&tiny_train(2), &f.data, &f.tables, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    let (auc, preds, labels) = evaluate(&loaded, &f.data, &f.tables).unwrap();
    assert_eq!(auc, out.report.final_auc);
    assert_eq!(preds.len(), labels.len());
    assert_eq!(labels.len(), out.report.test_targets);
}

#[test]
fn missing_code_table_is_reported() {
    let f = fixture(10);
    let tables = CodeTables {
        classified: f.tables.classified.clone(),
        raw: None,
    };
    let cfg = TrainConfig {
        no_classification: true,
        ..tiny_train(1)
    };
    assert!(matches!(
        train_run(&cfg, &f.data, &tables, 0),
        Err(Error::MissingArtifact(_))
    ));
    let cfg = TrainConfig {
        dsm: DsmConfig {
            no_code: true,
            hidden_dim: 8,
            ..DsmConfig::default()
        },
        ..tiny_train(1)
    };
    train_run(&cfg, &f.data, &CodeTables::default(), 0).unwrap();
}

#[test]
fn ablations_emit_one_row_per_variant() {
    let f = fixture(10);
    let rows = run_ablations(&tiny_train(1), &f.data, &f.tables, &Variant::ALL, |_, _| {}).unwrap();
    assert_eq!(rows.len(), Variant::ALL.len());
    for (row, v) in rows.iter().zip(Variant::ALL) {
        assert_eq!(row.variant, v);
        assert_eq!(row.report.runs.len(), 1);
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
    }
    assert!(Variant::parse("bogus").is_err());
}

#[test]
fn sweep_grid_shape_and_csv() {
    let f = fixture(10);
    let rows = sweep_lambda(
        &tiny_train(1),
        &f.data,
        &f.tables,
        &[0.0, 0.6, 30.0],
        &[true, false],
        |_| {},
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    let summary = summarize_sweep(&rows);
    assert_eq!(summary.len(), 6);
    assert_eq!(
        (summary[1].lambda, summary[1].attention_enabled),
        (0.0, false)
    );
    let csv = sweep_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,mode,seed,auc");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,attention,0,"));
    assert!(lines[6].starts_with("30,decay_only,0,"));
    let on = summary
        .iter()
        .find(|s| s.lambda == 30.0 && s.attention_enabled)
        .unwrap();
    let off = summary
        .iter()
        .find(|s| s.lambda == 30.0 && !s.attention_enabled)
        .unwrap();
    assert!((on.mean_auc - off.mean_auc).abs() < 1e-3);
}
