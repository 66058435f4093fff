use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pretrain::{pretrain_token_embeddings, PretrainedTokens};
use super::tokenize::tokenize;
use super::vocab::{TokenVocab, PAD_ID};
use crate::datamodel::{SubmissionEvent, Verdict};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numkernel::{AdamConfig, AdamState, Bound, ParamStore, Tape, Tensor, Var};
use crate::skipgram::SkipGramConfig;

pub const CLASSIFIER_KIND: &str = "code-classifier";
pub const CLASSIFIER_VERSION: u32 = 1;
const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Conv,
    MeanPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Two,
    Nine,
}

impl ClassMode {
    pub fn num_classes(self) -> usize {
        match self {
            ClassMode::Two => 2,
            ClassMode::Nine => 9,
        }
    }

    /// Two-class mode: Correct → 1, every error verdict → 0.
    pub fn label(self, v: Verdict) -> usize {
        match self {
            ClassMode::Two => usize::from(v.is_correct()),
            ClassMode::Nine => v.index(),
        }
    }
}

/// Skip-gram settings for token pre-training; the vector width is the
/// classifier's `token_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            window: 5,
            negatives: 5,
            epochs: 2,
            lr: 0.025,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub mode: ClassMode,
    pub encoder: Encoder,
    pub max_len: usize,
    pub min_freq: usize,
    pub token_dim: usize,
    pub feature_maps: usize,
    pub windows: Vec<usize>,
    /// Width `d0` of the code embedding.
    pub code_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub test_fraction: f64,
    /// Trains on a seeded subsample of at most this many submissions.
    pub max_train_samples: Option<usize>,
    pub freeze_tokens: bool,
    pub pretrain: PretrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            mode: ClassMode::Nine,
            encoder: Encoder::Conv,
            max_len: 256,
            min_freq: 2,
            token_dim: 100,
            feature_maps: 64,
            windows: vec![3, 4, 5],
            code_dim: 128,
            epochs: 4,
            batch_size: 64,
            lr: 1e-3,
            test_fraction: 0.2,
            max_train_samples: None,
            freeze_tokens: false,
            pretrain: PretrainConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_len", self.max_len),
            ("token_dim", self.token_dim),
            ("code_dim", self.code_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("classifier {name} must be positive")));
        }
        if self.encoder == Encoder::Conv
            && (self.feature_maps == 0 || self.windows.is_empty() || self.windows.contains(&0))
        {
            return Err(Error::Config(
                "convolutional encoder needs feature maps and positive windows".into(),
            ));
        }
        let mut sorted = self.windows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.windows.len() {
            return Err(Error::Config("convolution windows must be distinct".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(
                "classifier learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        self.skipgram().validate()
    }

    pub fn skipgram(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.token_dim,
            window: self.pretrain.window,
            negatives: self.pretrain.negatives,
            epochs: self.pretrain.epochs,
            lr: self.pretrain.lr,
        }
    }

    fn min_tokens(&self) -> usize {
        match self.encoder {
            Encoder::Conv => self.windows.iter().copied().max().unwrap_or(1),
            Encoder::MeanPool => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: u64,
    pub code: String,
    pub verdict: Verdict,
}

impl CodeSample {
    pub fn from_events(events: &[SubmissionEvent]) -> Vec<CodeSample> {
        events
            .iter()
            .map(|e| CodeSample {
                id: e.id,
                code: e.code.clone(),
                verdict: e.verdict,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub mode: ClassMode,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out accuracy; `None` when the test split is empty.
    pub accuracy: Option<f64>,
    /// Accuracy of always predicting the most frequent training class.
    pub majority_baseline: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Trained verdict classifier; its penultimate activations are the code embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeClassifier {
    pub config: ClassifierConfig,
    pub vocab: TokenVocab,
    pub params: ParamStore,
}

impl CodeClassifier {
    pub fn init(config: &ClassifierConfig, tokens: &PretrainedTokens, seed: u64) -> Result<Self> {
        config.validate()?;
        if tokens.dim() != config.token_dim {
            return Err(Error::dim(format!(
                "pre-trained tokens have width {}, classifier expects {}",
                tokens.dim(),
                config.token_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("tokens", tokens.vectors.clone());
        let pooled = match config.encoder {
            Encoder::Conv => {
                for &w in &config.windows {
                    params.insert_weight(
                        &format!("conv{w}"),
                        config.feature_maps,
                        w * config.token_dim,
                        &mut rng,
                    );
                    params.insert_bias(&format!("conv{w}_b"), config.feature_maps);
                }
                config.feature_maps * config.windows.len()
            }
            Encoder::MeanPool => config.token_dim,
        };
        params.insert_weight("proj", config.code_dim, pooled, &mut rng);
        params.insert_bias("proj_b", config.code_dim);
        params.insert_weight("out", config.mode.num_classes(), config.code_dim, &mut rng);
        params.insert_bias("out_b", config.mode.num_classes());
        Ok(CodeClassifier {
            config: config.clone(),
            vocab: tokens.vocab.clone(),
            params,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim
    }

    /// Token ids truncated to `max_len`, tail-padded to the widest window.
    pub fn encode(&self, code: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode(&tokenize(code), self.config.max_len);
        let min = self.config.min_tokens();
        if ids.len() < min {
            ids.resize(min, PAD_ID);
        }
        ids
    }

    /// Code embedding (`1 × d0`) for one token sequence.
    pub fn embed_ids<'t>(&self, b: &Bound<'t>, ids: &[usize]) -> Result<Var<'t>> {
        let x = b.get("tokens").gather_rows(ids)?;
        let pooled = match self.config.encoder {
            Encoder::Conv => {
                let maps = self
                    .config
                    .windows
                    .iter()
                    .map(|&w| {
                        Ok(x.conv1d(b.get(&format!("conv{w}")), w)?
                            .add_row(b.get(&format!("conv{w}_b")))?
                            .relu()
                            .max_rows())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Var::concat_cols(&maps)?
            }
            Encoder::MeanPool => x.mean_rows(),
        };
        Ok(pooled
            .matmul_nt(b.get("proj"))?
            .add_row(b.get("proj_b"))?
            .tanh())
    }

    /// Class logits for a batch of embeddings (`n × d0` → `n × classes`).
    pub fn logits<'t>(&self, b: &Bound<'t>, emb: Var<'t>) -> Result<Var<'t>> {
        emb.matmul_nt(b.get("out"))?.add_row(b.get("out_b"))
    }

    /// Mean cross-entropy over a batch of encoded samples.
    pub fn batch_loss<'t>(&self, b: &Bound<'t>, batch: &[(&[usize], usize)]) -> Result<Var<'t>> {
        let rows = batch
            .iter()
            .map(|(ids, _)| self.embed_ids(b, ids))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = batch.iter().map(|&(_, y)| y).collect();
        self.logits(b, Var::concat_rows(&rows)?)?
            .cross_entropy(&labels)
    }

    /// Embeddings of encoded sequences, `n × d0`, computed in chunks.
    pub fn embed_many(&self, seqs: &[&[usize]]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(seqs.len() * self.code_dim());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let tape = Tape::new();
            let b = self.params.bind_frozen(&tape);
            for ids in chunk {
                data.extend_from_slice(self.embed_ids(&b, ids)?.value().data());
            }
        }
        Tensor::new(seqs.len(), self.code_dim(), data)
    }

    pub fn predict_ids(&self, seqs: &[&[usize]]) -> Result<Vec<usize>> {
        let emb = self.embed_many(seqs)?;
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let logits = self.logits(&b, tape.constant(emb))?.value();
        Ok((0..logits.rows())
            .map(|r| argmax(logits.row_slice(r)))
            .collect())
    }

    pub fn embed(&self, code: &str) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        Ok(self.embed_ids(&b, &self.encode(code))?.value().into_data())
    }

    pub fn predict(&self, code: &str) -> Result<usize> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let emb = self.embed_ids(&b, &self.encode(code))?;
        Ok(argmax(self.logits(&b, emb)?.value().data()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::artifact::save(path, CLASSIFIER_KIND, CLASSIFIER_VERSION, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::artifact::load(path, CLASSIFIER_KIND, CLASSIFIER_VERSION)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-class seeded split: each class sends `round(fraction · n)` samples to
/// the test side but always keeps at least one in training.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| Error::Index(format!("label {y} with {classes} classes")))?
            .push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Stratification(format!(
                "class {class} has no training samples"
            )));
        }
        members.shuffle(rng);
        let n_test = ((members.len() as f64 * fraction).round() as usize).min(members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Pre-trains token vectors on every sample's code, then fits the classifier
/// on a stratified training split and reports held-out accuracy.
pub fn train_classifier(
    samples: &[CodeSample],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(CodeClassifier, PretrainedTokens, ClassifierReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..samples.len()).collect();
    if let Some(cap) = config.max_train_samples {
        if cap < pool.len() {
            pool.shuffle(&mut rng);
            pool.truncate(cap);
            pool.sort_unstable();
        }
    }
    let codes: Vec<&str> = samples.iter().map(|s| s.code.as_str()).collect();
    let tokens = pretrain_token_embeddings(
        &codes,
        config.max_len,
        config.min_freq,
        &config.skipgram(),
        rng.gen(),
    )?;
    let mut model = CodeClassifier::init(config, &tokens, rng.gen())?;

    let mode = config.mode;
    let labels: Vec<usize> = pool
        .iter()
        .map(|&i| mode.label(samples[i].verdict))
        .collect();
    let (train, test) =
        stratified_split(&labels, mode.num_classes(), config.test_fraction, &mut rng)?;
    let encoded: Vec<Vec<usize>> = pool
        .iter()
        .map(|&i| model.encode(&samples[i].code))
        .collect();

    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(config.lr));
    let token_slot = model.params.index_of("tokens").expect("token matrix");
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order = train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let b = model.params.bind(&tape);
            let batch: Vec<(&[usize], usize)> = chunk
                .iter()
                .map(|&k| (encoded[k].as_slice(), labels[k]))
                .collect();
            let loss = model.batch_loss(&b, &batch)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "classifier loss {value} in epoch {epoch}"
                )));
            }
            total += value * chunk.len() as f64;
            let mut grads = b.grads(&tape.backward(loss)?);
            if config.freeze_tokens {
                grads[token_slot].scale_assign(0.0);
            }
            adam.step(&mut model.params, &grads)?;
        }
        epoch_losses.push(total / order.len() as f64);
    }

    let (accuracy, majority_baseline) = if test.is_empty() {
        (None, None)
    } else {
        let mut counts = vec![0usize; mode.num_classes()];
        train.iter().for_each(|&k| counts[labels[k]] += 1);
        let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        let test_ids: Vec<&[usize]> = test.iter().map(|&k| encoded[k].as_slice()).collect();
        let predictions = model.predict_ids(&test_ids)?;
        let hits = test
            .iter()
            .zip(&predictions)
            .filter(|&(&k, &p)| p == labels[k])
            .count();
        let base = test.iter().filter(|&&k| labels[k] == majority).count();
        let n = test.len() as f64;
        (Some(hits as f64 / n), Some(base as f64 / n))
    };
    let report = ClassifierReport {
        mode,
        train_size: train.len(),
        test_size: test.len(),
        accuracy,
        majority_baseline,
        epoch_losses,
    };
    Ok((model, tokens, report))
}

/// One embedding row per submission, keyed by submission id.
pub fn embed_codes<'a>(
    model: &CodeClassifier,
    codes: impl IntoIterator<Item = (u64, &'a str)>,
) -> Result<EmbeddingTable> {
    let (ids, encoded): (Vec<u64>, Vec<Vec<usize>>) = codes
        .into_iter()
        .map(|(id, c)| (id, model.encode(c)))
        .unzip();
    if ids.is_empty() {
        return Err(Error::Data("no submissions to embed".into()));
    }
    let refs: Vec<&[usize]> = encoded.iter().map(Vec::as_slice).collect();
    EmbeddingTable::new(ids, model.embed_many(&refs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::gradcheck;

    fn tiny_config(encoder: Encoder, mode: ClassMode) -> ClassifierConfig {
        ClassifierConfig {
            mode,
            encoder,
            min_freq: 1,
            token_dim: 4,
            feature_maps: 3,
            windows: vec![2, 3],
            code_dim: 5,
            epochs: 1,
            batch_size: 4,
            pretrain: PretrainConfig {
                window: 2,
                negatives: 2,
                epochs: 1,
                lr: 0.05,
            },
            ..ClassifierConfig::default()
        }
    }

    fn tiny_samples() -> Vec<CodeSample> {
        Verdict::ALL
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| {
                (0..3).map(move |k| CodeSample {
                    id: (i * 3 + k) as u64,
                    code: format!("int m{i} = {k}; x += y{k};"),
                    verdict: v,
                })
            })
            .collect()
    }

    #[test]
    fn two_class_collapse_is_exhaustive() {
        for v in Verdict::ALL {
            let expected = if v == Verdict::Correct { 1 } else { 0 };
            assert_eq!(ClassMode::Two.label(v), expected, "{v:?}");
            assert_eq!(ClassMode::Nine.label(v), v.index());
        }
    }

    #[test]
    fn missing_class_is_a_stratification_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = stratified_split(&[0, 0, 2, 2], 3, 0.5, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Stratification(_)), "{err}");
        let samples: Vec<CodeSample> = tiny_samples()
            .into_iter()
            .filter(|s| s.verdict.is_correct())
            .collect();
        let err = train_classifier(&samples, &tiny_config(Encoder::MeanPool, ClassMode::Two), 1)
            .unwrap_err();
        assert!(matches!(err, Error::Stratification(_)), "{err}");
    }

    #[test]
    fn split_keeps_every_class_in_training() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).chain([5]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (train, test) = stratified_split(&labels, 6, 0.3, &mut rng).unwrap();
        assert_eq!(train.len() + test.len(), labels.len());
        for c in 0..6 {
            assert!(train.iter().any(|&i| labels[i] == c));
        }
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 3);
    }

    #[test]
    fn gradient_check_both_encoders() {
        for encoder in [Encoder::Conv, Encoder::MeanPool] {
            let cfg = tiny_config(encoder, ClassMode::Nine);
            let samples = tiny_samples();
            let codes: Vec<&str> = samples.iter().map(|s| s.code.as_str()).collect();
            let tokens = pretrain_token_embeddings(&codes, 64, 1, &cfg.skipgram(), 3).unwrap();
            let model = CodeClassifier::init(&cfg, &tokens, 5).unwrap();
            let encoded: Vec<Vec<usize>> = samples
                .iter()
                .take(6)
                .map(|s| model.encode(&s.code))
                .collect();
            let batch: Vec<(&[usize], usize)> = encoded
                .iter()
                .zip(&samples)
                .map(|(e, s)| (e.as_slice(), ClassMode::Nine.label(s.verdict)))
                .collect();
            let tape = Tape::new();
            let b = model.params.bind(&tape);
            let loss = model.batch_loss(&b, &batch).unwrap();
            let analytic = b.grads(&tape.backward(loss).unwrap());
            let report = gradcheck::check(&model.params, &analytic, 1e-5, 150, 7, |p| {
                let m = CodeClassifier {
                    params: p.clone(),
                    ..model.clone()
                };
                let tape = Tape::new();
                let b = m.params.bind(&tape);
                Ok(m.batch_loss(&b, &batch)?.value().item())
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "{encoder:?}: {report:?}");
        }
    }

    #[test]
    fn short_code_is_padded_for_convolution() {
        let cfg = tiny_config(Encoder::Conv, ClassMode::Nine);
        let samples = tiny_samples();
        let codes: Vec<&str> = samples.iter().map(|s| s.code.as_str()).collect();
        let tokens = pretrain_token_embeddings(&codes, 64, 1, &cfg.skipgram(), 3).unwrap();
        let model = CodeClassifier::init(&cfg, &tokens, 5).unwrap();
        assert_eq!(model.encode(""), vec![PAD_ID; 3]);
        assert_eq!(model.embed("").unwrap().len(), 5);
        assert_eq!(model.embed("never seen tokens @@").unwrap().len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(Encoder::Conv, ClassMode::Nine);
        let samples = tiny_samples();
        let (a, _, ra) = train_classifier(&samples, &cfg, 11).unwrap();
        let (b, _, rb) = train_classifier(&samples, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn duplicate_windows_rejected() {
        let cfg = ClassifierConfig {
            windows: vec![3, 3],
            ..ClassifierConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
