//! Problem embeddings from the problem–concept bipartite graph.

pub mod gat;
pub mod graph;
pub mod node2vec;

pub use gat::{
    gat_embed, gat_forward, init_gat_params, warmup_edge_prediction, EdgeWarmupConfig, GatConfig,
};
pub use graph::BipartiteGraph;
pub use node2vec::{node2vec_embed, random_walks, Node2VecConfig};
