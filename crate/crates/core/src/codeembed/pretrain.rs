use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{TokenVocab, PAD_ID};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numkernel::Tensor;
use crate::skipgram::{train_skipgram, SkipGramConfig};

/// Vocabulary plus skip-gram token vectors (`|V| × e`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainedTokens {
    pub vocab: TokenVocab,
    pub vectors: Tensor,
}

impl PretrainedTokens {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Mean of the token vectors of `code`; the zero vector for code with no tokens.
    pub fn mean_pool(&self, code: &str, max_len: usize) -> Vec<f64> {
        let ids = self.vocab.encode(&tokenize(code), max_len);
        let mut out = vec![0.0; self.dim()];
        for &id in &ids {
            for (o, v) in out.iter_mut().zip(self.vectors.row_slice(id)) {
                *o += v;
            }
        }
        if !ids.is_empty() {
            let n = ids.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        out
    }
}

/// Builds the vocabulary from `codes` and trains skip-gram token vectors.
/// The padding row is zeroed.
pub fn pretrain_token_embeddings(
    codes: &[&str],
    max_len: usize,
    min_freq: usize,
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<PretrainedTokens> {
    if max_len == 0 {
        return Err(Error::Config("max code length must be positive".into()));
    }
    let docs: Vec<Vec<String>> = codes.iter().map(|c| tokenize(c)).collect();
    let vocab = TokenVocab::build(docs.iter().map(Vec::as_slice), min_freq);
    let corpus: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d, max_len)).collect();
    let sg = train_skipgram(&corpus, vocab.len(), cfg, seed)?;
    let mut vectors = sg.input;
    vectors.row_slice_mut(PAD_ID).fill(0.0);
    Ok(PretrainedTokens { vocab, vectors })
}

/// Code table without supervision: mean-pooled pre-trained token vectors.
pub fn raw_code_table<'a>(
    tokens: &PretrainedTokens,
    codes: impl IntoIterator<Item = (u64, &'a str)>,
    max_len: usize,
) -> Result<EmbeddingTable> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (id, code) in codes {
        ids.push(id);
        data.extend(tokens.mean_pool(code, max_len));
    }
    if ids.is_empty() {
        return Err(Error::Data("no submissions to embed".into()));
    }
    EmbeddingTable::new(ids.clone(), Tensor::new(ids.len(), tokens.dim(), data)?)
}
