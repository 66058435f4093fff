use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::auc;
use crate::datamodel::{
    build_sequences, window_sequences, Corpus, FilterStats, KnowledgeBase, StudentSequence, Window,
};
use crate::dsm::{window_loss, DsmModel, WindowInput};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graphembed::{
    gat_forward, init_gat_params, node2vec_embed, warmup_edge_prediction, BipartiteGraph,
};
use crate::numkernel::{accumulate, AdamConfig, AdamState, ParamStore, Tape, Tensor};

pub const CHECKPOINT_KIND: &str = "pdkt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Filtered student sequences with the problem graph.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub graph: BipartiteGraph,
    pub sequences: Vec<StudentSequence>,
    pub filter: FilterStats,
}

impl Dataset {
    pub fn from_corpus(corpus: &Corpus, min_submissions: usize) -> Result<Self> {
        let (sequences, filter) =
            build_sequences(&corpus.events, &corpus.roles, &corpus.kb, min_submissions);
        if sequences.len() < 2 {
            return Err(Error::Data(format!(
                "{} students survive filtering; need at least 2",
                sequences.len()
            )));
        }
        Ok(Dataset {
            kb: corpus.kb.clone(),
            graph: BipartiteGraph::from_knowledge_base(&corpus.kb)?,
            sequences,
            filter,
        })
    }

    /// Submission ids of every kept step, in sequence order.
    pub fn submission_ids(&self) -> Vec<u64> {
        self.sequences
            .iter()
            .flat_map(|s| s.steps.iter().map(|st| st.submission_id))
            .collect()
    }
}

/// Code embedding tables for the full model and the unsupervised ablation.
#[derive(Clone, Debug, Default)]
pub struct CodeTables {
    pub classified: Option<EmbeddingTable>,
    pub raw: Option<EmbeddingTable>,
}

impl CodeTables {
    /// The table the configuration asks for; `None` when the code branch is off.
    pub fn select(&self, cfg: &TrainConfig) -> Result<Option<&EmbeddingTable>> {
        if cfg.dsm.no_code {
            return Ok(None);
        }
        let (table, what) = if cfg.no_classification {
            (&self.raw, "raw code table")
        } else {
            (&self.classified, "classifier code table")
        };
        table
            .as_ref()
            .map(Some)
            .ok_or_else(|| Error::MissingArtifact(what.into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProblemEncoder {
    Gat { params: ParamStore },
    Frozen { table: EmbeddingTable },
}

impl ProblemEncoder {
    /// Problem embedding matrix, `P × d1`, rows indexed by problem id.
    pub fn table(&self, graph: &BipartiteGraph, cfg: &TrainConfig) -> Result<Tensor> {
        match self {
            ProblemEncoder::Gat { params } => {
                let tape = Tape::new();
                let b = params.bind_frozen(&tape);
                Ok(gat_forward(graph, &cfg.gat, &b)?.value())
            }
            ProblemEncoder::Frozen { table } => Ok(table.vectors().clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    pub problems: ProblemEncoder,
    pub dsm: DsmModel,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifact::save(path, CHECKPOINT_KIND, CHECKPOINT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::artifact::load(path, CHECKPOINT_KIND, CHECKPOINT_VERSION)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub train_students: usize,
    pub test_students: usize,
    pub train_targets: usize,
    pub test_targets: usize,
    pub epochs: Vec<EpochLog>,
    /// Mean loss per target of each minibatch in the first epoch.
    pub first_epoch_batch_losses: Vec<f64>,
    pub best_epoch: usize,
    /// Test AUC of the best epoch.
    pub auc: f64,
    /// Test AUC after the last epoch (the checkpointed parameters).
    pub final_auc: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
}

/// Seeded student-level split; returns sequence indices `(train, test)`.
pub fn split_students(
    num_students: usize,
    test_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_students < 2 {
        return Err(Error::Data(
            "a train/test split needs at least two students".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..num_students).collect();
    idx.shuffle(rng);
    let n_test =
        ((num_students as f64 * test_fraction).round() as usize).clamp(1, num_students - 1);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Seeds drawn in a fixed order from the run seed, so every variant of a
/// run shares its split and initial values.
struct RunSeeds {
    split: u64,
    gat: u64,
    dsm: u64,
    node2vec: u64,
    shuffle: u64,
}

impl RunSeeds {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RunSeeds {
            split: rng.gen(),
            gat: rng.gen(),
            dsm: rng.gen(),
            node2vec: rng.gen(),
            shuffle: rng.gen(),
        }
    }
}

fn windows_for(data: &Dataset, which: &[usize], seq_len: usize) -> Result<Vec<Window>> {
    let seqs: Vec<StudentSequence> = which.iter().map(|&i| data.sequences[i].clone()).collect();
    Ok(window_sequences(&seqs, seq_len)?
        .into_iter()
        .filter(|w| w.num_targets() > 0)
        .collect())
}

fn split_windows(
    data: &Dataset,
    cfg: &TrainConfig,
    seeds: &RunSeeds,
) -> Result<(Vec<Window>, Vec<Window>, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.split);
    let (train, test) = split_students(data.sequences.len(), cfg.test_fraction, &mut rng)?;
    let (tw, sw) = (
        windows_for(data, &train, cfg.seq_len)?,
        windows_for(data, &test, cfg.seq_len)?,
    );
    if tw.is_empty() || sw.is_empty() {
        return Err(Error::Data(
            "train or test split has no window with a prediction target".into(),
        ));
    }
    Ok((tw, sw, train.len(), test.len()))
}

fn responses(w: &Window, n: usize) -> Tensor {
    Tensor::from_fn(n, 1, |r, _| f64::from(w.responses[r]))
}

fn code_rows(codes: Option<&EmbeddingTable>, w: &Window, n: usize) -> Result<Option<Tensor>> {
    codes.map(|c| c.gather(&w.submission_ids[..n])).transpose()
}

/// Test-time predictions for steps `1..n` of every window, with their labels.
pub fn predict_windows(
    dsm: &DsmModel,
    problem_table: &Tensor,
    codes: Option<&EmbeddingTable>,
    windows: &[Window],
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for w in windows {
        let n = w.valid_len();
        let tape = Tape::new();
        let b = dsm.params.bind_frozen(&tape);
        let input = WindowInput {
            problems: tape.constant(problem_table.gather_rows(&w.problem_ids[..n])?),
            responses: responses(w, n),
            codes: code_rows(codes, w, n)?.map(|t| tape.constant(t)),
        };
        let pred = dsm.forward(&b, &input)?.pred.value();
        preds.extend_from_slice(&pred.data()[1..n]);
        labels.extend_from_slice(&w.responses[1..n]);
    }
    Ok((preds, labels))
}

/// Trains one seed end to end: graph encoder (unless frozen) and DSM by Adam
/// on the mean BCE over every target in a minibatch of windows.
pub fn train_run(
    cfg: &TrainConfig,
    data: &Dataset,
    tables: &CodeTables,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let codes = tables.select(cfg)?;
    let seeds = RunSeeds::new(seed);
    let (train_windows, test_windows, train_students, test_students) =
        split_windows(data, cfg, &seeds)?;

    let mut gat_rng = ChaCha8Rng::seed_from_u64(seeds.gat);
    let mut problems = if cfg.node2vec {
        ProblemEncoder::Frozen {
            table: node2vec_embed(&data.graph, &cfg.node2vec_effective(), seeds.node2vec)?,
        }
    } else {
        let mut params = init_gat_params(&cfg.gat, &data.kb, &mut gat_rng)?;
        if let Some(warm) = &cfg.gat_warmup {
            warmup_edge_prediction(&data.graph, &cfg.gat, &mut params, warm, gat_rng.gen())?;
        }
        ProblemEncoder::Gat { params }
    };
    let code_dim = codes
        .or(tables.classified.as_ref())
        .map_or(1, EmbeddingTable::dim);
    let mut dsm = DsmModel::init(&cfg.dsm, cfg.problem_dim(), code_dim, seeds.dsm)?;
    let train_graph =
        matches!(problems, ProblemEncoder::Gat { .. }) && !cfg.freeze_problem_embeddings;

    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut dsm_adam = AdamState::new(&dsm.params, adam_cfg);
    let mut gat_adam = match &problems {
        ProblemEncoder::Gat { params } => Some(AdamState::new(params, adam_cfg)),
        ProblemEncoder::Frozen { .. } => None,
    };

    let train_targets = train_windows.iter().map(Window::num_targets).sum();
    let test_targets = test_windows.iter().map(Window::num_targets).sum();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut first_epoch_batch_losses = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let targets: usize = batch.iter().map(|w| w.num_targets()).sum();
            let scale = 1.0 / targets as f64;

            let graph_tape = Tape::new();
            let (e_var, gat_bound) = match &problems {
                ProblemEncoder::Gat { params } => {
                    let b = if train_graph {
                        params.bind(&graph_tape)
                    } else {
                        params.bind_frozen(&graph_tape)
                    };
                    (gat_forward(&data.graph, &cfg.gat, &b)?, Some(b))
                }
                ProblemEncoder::Frozen { table } => {
                    (graph_tape.constant(table.vectors().clone()), None)
                }
            };
            let e_value = e_var.value();
            let mut d_e = Tensor::zeros(e_value.rows(), e_value.cols());
            let mut dsm_grads = dsm.params.zeros_like();
            let mut batch_loss = 0.0;

            for w in &batch {
                let n = w.valid_len();
                let tape = Tape::new();
                let b = dsm.params.bind(&tape);
                let e = tape.leaf(e_value.clone(), train_graph);
                let r = responses(w, n);
                let input = WindowInput {
                    problems: e.gather_rows(&w.problem_ids[..n])?,
                    responses: r.clone(),
                    codes: code_rows(codes, w, n)?.map(|t| tape.constant(t)),
                };
                let (loss, _) = window_loss(dsm.forward(&b, &input)?.pred, &r)?;
                batch_loss += loss.value().item();
                let grads = tape.backward(loss.scale(scale))?;
                accumulate(&mut dsm_grads, &b.grads(&grads))?;
                if train_graph {
                    d_e.add_assign(&grads.get_or_zeros(e));
                }
            }
            let mean = batch_loss * scale;
            if !mean.is_finite() {
                return Err(Error::Divergence(format!(
                    "training loss became {mean} in epoch {epoch} (seed {seed})"
                )));
            }
            if epoch == 0 {
                first_epoch_batch_losses.push(mean);
            }
            epoch_loss += batch_loss;

            if let (true, Some(b), ProblemEncoder::Gat { params }, Some(adam)) =
                (train_graph, gat_bound, &mut problems, gat_adam.as_mut())
            {
                let grads = b.grads(&graph_tape.backward_from(e_var, d_e)?);
                adam.step(params, &grads)?;
            }
            dsm_adam.step(&mut dsm.params, &dsm_grads)?;
        }
        if !dsm.params.is_finite() {
            return Err(Error::Divergence(format!(
                "parameters became non-finite in epoch {epoch} (seed {seed})"
            )));
        }
        let table = problems.table(&data.graph, cfg)?;
        let (preds, labels) = predict_windows(&dsm, &table, codes, &test_windows)?;
        epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_targets as f64,
            test_auc: auc(&preds, &labels)?,
        });
    }

    let best = epochs.iter().fold(
        &epochs[0],
        |a, e| if e.test_auc > a.test_auc { e } else { a },
    );
    let report = RunReport {
        seed,
        train_students,
        test_students,
        train_targets,
        test_targets,
        best_epoch: best.epoch,
        auc: best.test_auc,
        final_auc: epochs.last().expect("at least one epoch").test_auc,
        epochs,
        first_epoch_batch_losses,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            seed,
            problems,
            dsm,
        },
        report,
    })
}

/// Predictions and AUC of a checkpoint on its own test split.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &Dataset,
    tables: &CodeTables,
) -> Result<(f64, Vec<f64>, Vec<u8>)> {
    let cfg = &ckpt.config;
    let codes = tables.select(cfg)?;
    let (_, test_windows, _, _) = split_windows(data, cfg, &RunSeeds::new(ckpt.seed))?;
    let table = ckpt.problems.table(&data.graph, cfg)?;
    let (preds, labels) = predict_windows(&ckpt.dsm, &table, codes, &test_windows)?;
    Ok((auc(&preds, &labels)?, preds, labels))
}

/// Students of each side of the split for a given seed, as user ids.
pub fn split_user_ids(
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(RunSeeds::new(seed).split);
    let (train, test) = split_students(data.sequences.len(), cfg.test_fraction, &mut rng)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.sequences[i].user_id).collect();
    Ok((ids(&train), ids(&test)))
}
