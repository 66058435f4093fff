use serde::{Deserialize, Serialize};

use crate::dsm::DsmConfig;
use crate::error::{Error, Result};
use crate::graphembed::{EdgeWarmupConfig, GatConfig, Node2VecConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Window length `L`.
    pub seq_len: usize,
    /// Share of students held out for testing.
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub dsm: DsmConfig,
    pub gat: GatConfig,
    /// Replace the graph-attention encoder with frozen node2vec vectors
    /// (their width follows `gat.output_dim`).
    pub node2vec: bool,
    pub node2vec_config: Node2VecConfig,
    /// Feed mean-pooled pre-trained token vectors instead of classifier features.
    pub no_classification: bool,
    /// Keep the graph-attention parameters fixed during training.
    pub freeze_problem_embeddings: bool,
    /// Optional edge-prediction warm-up of the graph encoder before training.
    pub gat_warmup: Option<EdgeWarmupConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            lr: 1e-3,
            epochs: 10,
            seq_len: 200,
            test_fraction: 0.2,
            seeds: vec![0, 1, 2, 3, 4],
            dsm: DsmConfig::default(),
            gat: GatConfig::default(),
            node2vec: false,
            node2vec_config: Node2VecConfig::default(),
            no_classification: false,
            freeze_problem_embeddings: false,
            gat_warmup: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.seq_len < 2 {
            return Err(Error::Config(format!(
                "seq_len must be at least 2, got {}",
                self.seq_len
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.dsm.validate()?;
        self.gat.validate()?;
        if self.node2vec {
            self.node2vec_config.validate()?;
        }
        Ok(())
    }

    pub fn problem_dim(&self) -> usize {
        self.gat.output_dim
    }

    pub fn node2vec_effective(&self) -> Node2VecConfig {
        let mut c = self.node2vec_config.clone();
        c.skipgram.dim = self.problem_dim();
        c
    }
}
