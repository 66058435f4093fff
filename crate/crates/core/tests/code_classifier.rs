//! Verdict classifier on synthetic marker corpora.

use pdkt::codeembed::{
    embed_codes, train_classifier, ClassMode, ClassifierConfig, CodeClassifier, CodeSample, Encoder,
};
use pdkt::datamodel::synth::{marker, render_code};
use pdkt::datamodel::{SynthConfig, Verdict};
use pdkt::numkernel::cosine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn marker_corpus(per_class: usize, seed: u64) -> Vec<CodeSample> {
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..per_class {
        for v in Verdict::ALL {
            out.push(CodeSample {
                id: out.len() as u64,
                code: render_code(v, &cfg, &mut rng),
                verdict: v,
            });
        }
    }
    out
}

fn desk_config(mode: ClassMode) -> ClassifierConfig {
    ClassifierConfig {
        mode,
        token_dim: 16,
        feature_maps: 16,
        code_dim: 16,
        epochs: 10,
        batch_size: 16,
        lr: 5e-3,
        ..ClassifierConfig::default()
    }
}

/// Lookup oracle: the verdict whose marker identifier appears in the text.
fn oracle(code: &str) -> Option<Verdict> {
    Verdict::ALL.into_iter().find(|&v| code.contains(marker(v)))
}

#[test]
fn nine_class_marker_accuracy() {
    let samples = marker_corpus(60, 1);
    assert!(samples.iter().all(|s| oracle(&s.code) == Some(s.verdict)));
    let (_, _, report) = train_classifier(&samples, &desk_config(ClassMode::Nine), 2).unwrap();
    let acc = report.accuracy.unwrap();
    assert!(acc > 0.95, "{report:?}");
    assert!(acc >= report.majority_baseline.unwrap());
}

#[test]
fn two_class_and_mean_pool_beat_baseline() {
    let samples = marker_corpus(30, 3);
    let (_, _, two) = train_classifier(&samples, &desk_config(ClassMode::Two), 4).unwrap();
    assert!(
        two.accuracy.unwrap() >= two.majority_baseline.unwrap(),
        "{two:?}"
    );
    let cfg = ClassifierConfig {
        encoder: Encoder::MeanPool,
        epochs: 8,
        ..desk_config(ClassMode::Nine)
    };
    let (_, _, mean) = train_classifier(&samples, &cfg, 4).unwrap();
    assert!(
        mean.accuracy.unwrap() >= mean.majority_baseline.unwrap(),
        "{mean:?}"
    );
}

#[test]
fn embeddings_deterministic_and_survive_round_trip() {
    let samples = marker_corpus(12, 5);
    let (model, _, _) = train_classifier(&samples, &desk_config(ClassMode::Nine), 6).unwrap();
    let items = || samples.iter().map(|s| (s.id, s.code.as_str()));
    let table = embed_codes(&model, items()).unwrap();
    assert_eq!(table.dim(), 16);
    assert_eq!(table.len(), samples.len());
    assert_eq!(
        model.embed(&samples[0].code).unwrap(),
        model.embed(&samples[0].code).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("classifier.json");
    model.save(&path).unwrap();
    let loaded = CodeClassifier::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(embed_codes(&loaded, items()).unwrap(), table);
}

#[test]
fn same_verdict_codes_are_closer() {
    let samples = marker_corpus(40, 7);
    let (model, _, _) = train_classifier(&samples, &desk_config(ClassMode::Nine), 8).unwrap();
    let of = |v: Verdict| -> Vec<Vec<f64>> {
        samples
            .iter()
            .filter(|s| s.verdict == v)
            .map(|s| model.embed(&s.code).unwrap())
            .collect()
    };
    let correct = of(Verdict::Correct);
    let compile = of(Verdict::CompileError);
    let mean = |pairs: Vec<f64>| pairs.iter().sum::<f64>() / pairs.len() as f64;
    let mut within = Vec::new();
    for i in 0..correct.len() {
        for j in i + 1..correct.len() {
            within.push(cosine(&correct[i], &correct[j]));
        }
    }
    let across: Vec<f64> = correct
        .iter()
        .flat_map(|a| compile.iter().map(move |b| cosine(a, b)))
        .collect();
    let (w, a) = (mean(within), mean(across));
    assert!(w > a, "within {w} across {a}");
}
