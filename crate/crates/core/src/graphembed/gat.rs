//! Graph attention encoder for the problem–concept graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::BipartiteGraph;
use crate::datamodel::KnowledgeBase;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numkernel::tape::graph_attention_forward;
use crate::numkernel::{AdamConfig, AdamState, Bound, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatConfig {
    /// Width of the initial node features.
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Problem embedding width `d1`.
    pub output_dim: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    /// Initialise node features from hashed bag-of-words of problem/concept text.
    pub text_init: bool,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            input_dim: 256,
            hidden_dim: 256,
            output_dim: 256,
            layers: 2,
            leaky_slope: 0.2,
            text_init: false,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(
                "graph attention dims and layer count must be positive".into(),
            ));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let fan_in = if l == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                let out = if l + 1 == self.layers {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, out)
            })
            .collect()
    }
}

/// Node features plus per-layer projection `w{l}` and attention vector `a{l}`.
pub fn init_gat_params(
    cfg: &GatConfig,
    kb: &KnowledgeBase,
    rng: &mut impl Rng,
) -> Result<ParamStore> {
    cfg.validate()?;
    let n = kb.problems.len() + kb.concepts.len();
    let mut p = ParamStore::new();
    let mut features = Tensor::from_fn(n, cfg.input_dim, |_, _| rng.gen_range(-1.0..1.0));
    if cfg.text_init {
        let texts = kb
            .problems
            .iter()
            .map(|p| p.text.as_str())
            .chain(kb.concepts.iter().map(|c| c.name.as_str()));
        for (row, text) in texts.enumerate() {
            let bow = hashed_bag_of_words(text, cfg.input_dim);
            for (f, b) in features.row_slice_mut(row).iter_mut().zip(bow) {
                *f = b + 0.1 * *f;
            }
        }
    }
    p.insert("features", features);
    for (l, (fan_in, out)) in cfg.layer_dims().into_iter().enumerate() {
        p.insert_weight(&format!("w{l}"), out, fan_in, rng);
        p.insert_weight(&format!("a{l}"), 1, 2 * out, rng);
    }
    Ok(p)
}

/// L2-normalised hashed counts of lower-cased alphanumeric words.
pub fn hashed_bag_of_words(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        // FNV-1a, stable across platforms and releases
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.to_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// All node embeddings (`N × d1`) on the tape.
pub fn gat_forward_nodes<'t>(
    graph: &BipartiteGraph,
    cfg: &GatConfig,
    params: &Bound<'t>,
) -> Result<Var<'t>> {
    let hood = graph.neighborhoods_with_self();
    let mut x = params.get("features");
    for l in 0..cfg.layers {
        let z = x.matmul_nt(params.get(&format!("w{l}")))?;
        let h = z.graph_attention(params.get(&format!("a{l}")), hood.clone(), cfg.leaky_slope)?;
        x = if l + 1 == cfg.layers { h } else { h.tanh() };
    }
    Ok(x)
}

/// Problem rows of the final layer, `P × d1`.
pub fn gat_forward<'t>(
    graph: &BipartiteGraph,
    cfg: &GatConfig,
    params: &Bound<'t>,
) -> Result<Var<'t>> {
    gat_forward_nodes(graph, cfg, params)?.slice_rows(0, graph.num_problems())
}

/// Inference-only problem embeddings.
pub fn gat_embed(
    graph: &BipartiteGraph,
    cfg: &GatConfig,
    params: &ParamStore,
) -> Result<EmbeddingTable> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    EmbeddingTable::dense(gat_forward(graph, cfg, &bound)?.value())
}

/// Attention coefficients per layer and node, aligned with
/// [`BipartiteGraph::neighborhoods_with_self`].
pub fn attention_coefficients(
    graph: &BipartiteGraph,
    cfg: &GatConfig,
    params: &ParamStore,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let hood = graph.neighborhoods_with_self();
    let mut x = params.get("features").clone();
    let mut out = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let z = x.matmul_nt(params.get(&format!("w{l}")))?;
        let (h, alpha, _) =
            graph_attention_forward(&z, params.get(&format!("a{l}")), &hood, cfg.leaky_slope)?;
        out.push(alpha);
        x = if l + 1 == cfg.layers {
            h
        } else {
            h.map(f64::tanh)
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeWarmupConfig {
    pub steps: usize,
    pub lr: f64,
    /// Sampled non-edges per observed edge.
    pub negatives: usize,
}

impl Default for EdgeWarmupConfig {
    fn default() -> Self {
        EdgeWarmupConfig {
            steps: 50,
            lr: 1e-2,
            negatives: 1,
        }
    }
}

/// Optional stand-alone pre-training: binary cross-entropy on
/// `σ(z_problem · z_concept)` for observed edges vs sampled non-edges.
/// Returns the loss after each step.
pub fn warmup_edge_prediction(
    graph: &BipartiteGraph,
    cfg: &GatConfig,
    params: &mut ParamStore,
    warm: &EdgeWarmupConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(params, AdamConfig::with_lr(warm.lr));
    let mut losses = Vec::with_capacity(warm.steps);
    for _ in 0..warm.steps {
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut labels = Vec::new();
        for &(p, c) in graph.edges() {
            left.push(p);
            right.push(graph.concept_node(c));
            labels.push(1.0);
            for _ in 0..warm.negatives {
                let c2 = rng.gen_range(0..graph.num_concepts());
                let node = graph.concept_node(c2);
                if !graph.has_edge(p, node) {
                    left.push(p);
                    right.push(node);
                    labels.push(0.0);
                }
            }
        }
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let nodes = gat_forward_nodes(graph, cfg, &bound)?;
        let scores = nodes.gather_rows(&left)?.mul(nodes.gather_rows(&right)?)?;
        let ones = tape.constant(Tensor::full(cfg.output_dim, 1, 1.0));
        let prob = scores.matmul(ones)?.sigmoid();
        let n = labels.len();
        let loss = prob
            .bce_loss(&Tensor::column(&labels), &Tensor::full(n, 1, 1.0))?
            .scale(1.0 / n as f64);
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::Divergence("edge warm-up loss is not finite".into()));
        }
        losses.push(value);
        let grads = bound.grads(&tape.backward(loss)?);
        adam.step(params, &grads)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Concept, Problem};

    fn kb(problem_concepts: &[&[usize]], concepts: usize) -> KnowledgeBase {
        KnowledgeBase {
            problems: problem_concepts
                .iter()
                .enumerate()
                .map(|(id, cs)| Problem {
                    id,
                    text: format!("problem {id}"),
                    difficulty: 1,
                    concept_ids: cs.to_vec(),
                })
                .collect(),
            concepts: (0..concepts)
                .map(|id| Concept {
                    id,
                    name: format!("c{id}"),
                })
                .collect(),
        }
    }

    fn small_cfg() -> GatConfig {
        GatConfig {
            input_dim: 4,
            hidden_dim: 5,
            output_dim: 3,
            ..GatConfig::default()
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let kb = kb(&[&[0], &[0, 1], &[1, 2], &[2]], 3);
        let g = BipartiteGraph::from_knowledge_base(&kb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_gat_params(&small_cfg(), &kb, &mut rng).unwrap();
        for layer in attention_coefficients(&g, &small_cfg(), &p).unwrap() {
            for alpha in layer {
                assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_only_neighbourhood_passes_projection_through() {
        let g = BipartiteGraph::new(1, 1, &[(0, 0)]).unwrap();
        let hood = std::rc::Rc::new(vec![vec![0], vec![1]]);
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![0.3, -0.2], vec![1.0, 2.0]]).unwrap());
        let a = tape.constant(Tensor::row(&[0.5, -1.0, 2.0, 0.1]));
        let out = z.graph_attention(a, hood, 0.2).unwrap();
        assert_eq!(out.value(), z.value());
        assert_eq!(g.num_nodes(), 2);
    }

    #[test]
    fn identical_concept_sets_and_features_give_identical_embeddings() {
        let kb = kb(&[&[0, 1], &[0, 1], &[2]], 3);
        let g = BipartiteGraph::from_knowledge_base(&kb).unwrap();
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init_gat_params(&cfg, &kb, &mut rng).unwrap();
        let f0 = p.get("features").row_slice(0).to_vec();
        p.get_mut("features").row_slice_mut(1).copy_from_slice(&f0);
        let e = gat_embed(&g, &cfg, &p).unwrap();
        assert_eq!(e.get(0), e.get(1));
        assert_ne!(e.get(0), e.get(2));
    }

    #[test]
    fn relabelling_nodes_permutes_embeddings() {
        let base = kb(&[&[0], &[0, 1], &[1, 2], &[2], &[0, 2]], 3);
        let perm = [3usize, 0, 4, 1, 2]; // new id of old problem i
        let mut problems = base.problems.clone();
        for (old, p) in base.problems.iter().enumerate() {
            problems[perm[old]] = Problem {
                id: perm[old],
                ..p.clone()
            };
        }
        let permuted = KnowledgeBase {
            problems,
            concepts: base.concepts.clone(),
        };
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_gat_params(&cfg, &base, &mut rng).unwrap();
        let mut q = p.clone();
        for old in 0..5 {
            let row = p.get("features").row_slice(old).to_vec();
            q.get_mut("features")
                .row_slice_mut(perm[old])
                .copy_from_slice(&row);
        }
        let e1 = gat_embed(
            &BipartiteGraph::from_knowledge_base(&base).unwrap(),
            &cfg,
            &p,
        )
        .unwrap();
        let e2 = gat_embed(
            &BipartiteGraph::from_knowledge_base(&permuted).unwrap(),
            &cfg,
            &q,
        )
        .unwrap();
        for old in 0..5 {
            let (a, b) = (
                e1.get(old as u64).unwrap(),
                e2.get(perm[old] as u64).unwrap(),
            );
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_warmup_reduces_loss() {
        let kb = kb(&[&[0], &[0, 1], &[1, 2], &[2], &[3], &[3, 0]], 4);
        let g = BipartiteGraph::from_knowledge_base(&kb).unwrap();
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_gat_params(&cfg, &kb, &mut rng).unwrap();
        let losses = warmup_edge_prediction(
            &g,
            &cfg,
            &mut p,
            &EdgeWarmupConfig {
                steps: 60,
                lr: 0.02,
                negatives: 2,
            },
            4,
        )
        .unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn hashed_words_are_stable_and_normalised() {
        let a = hashed_bag_of_words("Loops and Arrays", 16);
        assert_eq!(a, hashed_bag_of_words("loops AND arrays!", 16));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
