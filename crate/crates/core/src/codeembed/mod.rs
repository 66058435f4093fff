//! Supervised code embedding: lexing, token pre-training, verdict
//! classification, and extraction of the penultimate features.

pub mod classifier;
pub mod pretrain;
pub mod tokenize;
pub mod vocab;

pub use classifier::{
    embed_codes, stratified_split, train_classifier, ClassMode, ClassifierConfig, ClassifierReport,
    CodeClassifier, CodeSample, Encoder, PretrainConfig,
};
pub use pretrain::{pretrain_token_embeddings, raw_code_table, PretrainedTokens};
pub use tokenize::tokenize;
pub use vocab::{TokenVocab, PAD_ID, UNK_ID};
