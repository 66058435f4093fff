//! Skip-gram with negative sampling over integer token sequences.
//! Used for code-token pre-training and for random-walk node embeddings.

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, sigmoid, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 2,
            lr: 0.025,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "skip-gram dim, window, negatives and epochs must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(
                "skip-gram learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Target (`input`) and context (`output`) vectors, `vocab × dim` each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGram {
    pub input: Tensor,
    pub output: Tensor,
}

impl SkipGram {
    /// `σ(input[a] · output[b])`, the model's co-occurrence probability.
    pub fn pair_score(&self, a: usize, b: usize) -> f64 {
        sigmoid(dot(self.input.row_slice(a), self.output.row_slice(b)))
    }
}

/// Trains on every `(center, context)` pair within `window` positions.
/// Negatives come from the unigram distribution raised to 0.75; the learning
/// rate decays linearly to zero over all pairs.
pub fn train_skipgram(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<SkipGram> {
    cfg.validate()?;
    let total_tokens: usize = corpus.iter().map(Vec::len).sum();
    if total_tokens == 0 || vocab_size == 0 {
        return Err(Error::Data("skip-gram corpus is empty".into()));
    }
    let mut counts = vec![0usize; vocab_size];
    for &t in corpus.iter().flatten() {
        if t >= vocab_size {
            return Err(Error::Index(format!(
                "token {t} outside vocabulary of {vocab_size}"
            )));
        }
        counts[t] += 1;
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::Data(format!("negative-sampling table: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 / cfg.dim as f64;
    let mut input = Tensor::from_fn(vocab_size, cfg.dim, |_, _| rng.gen_range(-half..half));
    let mut output = Tensor::zeros(vocab_size, cfg.dim);

    let total_steps = (cfg.epochs * total_tokens) as f64;
    let mut step = 0usize;
    let mut grad_in = vec![0.0; cfg.dim];
    for _ in 0..cfg.epochs {
        for seq in corpus {
            for (pos, &center) in seq.iter().enumerate() {
                let lr = cfg.lr * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(seq.len());
                for (ctx_pos, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad_in.fill(0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let score = sigmoid(dot(input.row_slice(center), output.row_slice(target)));
                        let g = lr * (label - score);
                        let out_row = output.row_slice_mut(target);
                        for (gi, o) in grad_in.iter_mut().zip(out_row.iter()) {
                            *gi += g * o;
                        }
                        let in_row = input.row_slice(center).to_vec();
                        for (o, i) in output.row_slice_mut(target).iter_mut().zip(&in_row) {
                            *o += g * i;
                        }
                    }
                    for (i, gi) in input.row_slice_mut(center).iter_mut().zip(&grad_in) {
                        *i += gi;
                    }
                }
            }
        }
    }
    if !input.is_finite() || !output.is_finite() {
        return Err(Error::Divergence(
            "skip-gram produced non-finite vectors".into(),
        ));
    }
    Ok(SkipGram { input, output })
}
