//! Second-order biased random walks followed by skip-gram training.

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::graph::BipartiteGraph;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::skipgram::{train_skipgram, SkipGramConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Node2VecConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub skipgram: SkipGramConfig,
}

impl Default for Node2VecConfig {
    fn default() -> Self {
        Node2VecConfig {
            walks_per_node: 10,
            walk_length: 20,
            p: 1.0,
            q: 1.0,
            skipgram: SkipGramConfig {
                dim: 256,
                window: 5,
                negatives: 5,
                epochs: 1,
                lr: 0.025,
            },
        }
    }
}

impl Node2VecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 || self.walk_length < 2 {
            return Err(Error::Config(
                "node2vec needs walks_per_node >= 1 and walk_length >= 2".into(),
            ));
        }
        if !(self.p > 0.0 && self.q > 0.0 && self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::Config(format!(
                "node2vec p and q must be positive, got p={} q={}",
                self.p, self.q
            )));
        }
        self.skipgram.validate()
    }
}

/// Walks start from every node `walks_per_node` times, node order reshuffled each round.
pub fn random_walks(
    graph: &BipartiteGraph,
    cfg: &Node2VecConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let mut walks = Vec::with_capacity(cfg.walks_per_node * graph.num_nodes());
    let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
    for _ in 0..cfg.walks_per_node {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for &start in &order {
            walks.push(walk_from(graph, start, cfg, rng));
        }
    }
    Ok(walks)
}

fn walk_from(
    graph: &BipartiteGraph,
    start: usize,
    cfg: &Node2VecConfig,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut walk = vec![start];
    while walk.len() < cfg.walk_length {
        let cur = *walk.last().expect("non-empty walk");
        let nbrs = graph.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            nbrs[rng.gen_range(0..nbrs.len())]
        } else {
            let prev = walk[walk.len() - 2];
            let weights = nbrs.iter().map(|&x| {
                if x == prev {
                    1.0 / cfg.p
                } else if graph.has_edge(x, prev) {
                    1.0
                } else {
                    1.0 / cfg.q
                }
            });
            let dist = WeightedIndex::new(weights).expect("positive weights");
            nbrs[dist.sample(rng)]
        };
        walk.push(next);
    }
    walk
}

/// Frozen problem vectors from walks over the whole graph.
pub fn node2vec_embed(
    graph: &BipartiteGraph,
    cfg: &Node2VecConfig,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walks = random_walks(graph, cfg, &mut rng)?;
    let model = train_skipgram(&walks, graph.num_nodes(), &cfg.skipgram, rng.gen())?;
    let problems: Vec<usize> = (0..graph.num_problems()).collect();
    EmbeddingTable::dense(model.input.gather_rows(&problems)?)
}
