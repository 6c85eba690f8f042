//! Masked-reconstruction pretraining over a corpus of graph partitions.
//!
//! Every epoch regenerates one walk per node in every partition. Each
//! partition's walks are shuffled and cut into batches of `batch_size`, and the
//! batches of all partitions are then shuffled together, so a step always
//! trains on sequences from a single partition.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{GsptError, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::nn::node_loss::batch_loss_grad;
use crate::nn::{DropoutConfig, Layout, ModelParams, ModelShape};
use crate::optim::{AdamW, Schedule};
use crate::partition::{induced_subgraph, PartitionMap};
use crate::rng;
use crate::sequence::{build_sequence, MaskedSequence, MaskingConfig, NegativeMode};
use crate::walk::{generate_epoch_walks, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_updates: u64,
    pub weight_decay: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: DropoutConfig,
    pub walk: WalkConfig,
    pub masking: MaskingConfig,
    pub negatives: NegativeMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            peak_lr: 1e-4,
            end_lr: 1e-5,
            warmup_updates: 10_000,
            weight_decay: 0.01,
            batch_size: 1024,
            hidden_dim: 768,
            ffn_dim: 3072,
            n_layers: 3,
            n_heads: 12,
            dropout: DropoutConfig {
                dropout: 0.3,
                attention_dropout: 0.3,
                emb_dropout: 0.3,
            },
            walk: WalkConfig::default(),
            masking: MaskingConfig::default(),
            negatives: NegativeMode::Distractor,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            d: self.hidden_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            max_len: self.walk.walk_length,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.peak_lr,
            end_lr: self.end_lr,
            warmup_updates: self.warmup_updates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(GsptError::config("epochs and batch_size must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GsptError::config("weight_decay must be >= 0"));
        }
        for (name, p) in [
            ("dropout", self.dropout.dropout),
            ("attention_dropout", self.dropout.attention_dropout),
            ("emb_dropout", self.dropout.emb_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(GsptError::config(format!("{name} must lie in [0, 1)")));
            }
        }
        self.shape().validate()?;
        self.walk.validate()?;
        self.masking.validate()
    }
}

/// One pretraining partition: a graph over local ids plus the global id of
/// each local node.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPart {
    pub graph: Graph,
    pub nodes: Vec<u32>,
}

/// Partitions sharing one global feature matrix. `RANDOM` replacements draw
/// from all rows; distractors come from the batch's own partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub features: FeatureMatrix,
    pub parts: Vec<CorpusPart>,
}

impl Corpus {
    pub fn from_partitions(ds: &Dataset, pm: &PartitionMap) -> Result<Self> {
        let mut parts = Vec::with_capacity(pm.num_parts());
        for p in 0..pm.num_parts() {
            let (graph, map) = induced_subgraph(&ds.graph, pm, p)?;
            parts.push(CorpusPart {
                graph,
                nodes: map.into_iter().map(|u| u as u32).collect(),
            });
        }
        Corpus::new(ds.features.clone(), parts)
    }

    /// Each dataset becomes one partition; feature widths must agree.
    pub fn from_datasets(datasets: &[&Dataset]) -> Result<Self> {
        let first = datasets.first().ok_or_else(|| GsptError::data("empty corpus"))?;
        let mut features = first.features.clone();
        let mut parts = Vec::new();
        for (i, ds) in datasets.iter().enumerate() {
            if ds.d() != first.d() {
                return Err(GsptError::Dimension(format!(
                    "dataset {i} has feature width {}, expected {}",
                    ds.d(),
                    first.d()
                )));
            }
            let offset = if i == 0 {
                0
            } else {
                let o = features.n();
                features.append_rows(ds.features.data())?;
                o
            };
            parts.push(CorpusPart {
                graph: ds.graph.clone(),
                nodes: (0..ds.n()).map(|u| (offset + u) as u32).collect(),
            });
        }
        Corpus::new(features, parts)
    }

    pub fn new(features: FeatureMatrix, parts: Vec<CorpusPart>) -> Result<Self> {
        if parts.is_empty() {
            return Err(GsptError::data("empty corpus"));
        }
        for (i, p) in parts.iter().enumerate() {
            if p.graph.n() != p.nodes.len() {
                return Err(GsptError::data(format!("partition {i} node map length mismatch")));
            }
            if p.nodes.is_empty() {
                return Err(GsptError::data(format!("partition {i} is empty")));
            }
            if p.nodes.iter().any(|&u| u as usize >= features.n()) {
                return Err(GsptError::data(format!("partition {i} refers past the feature matrix")));
            }
        }
        Ok(Corpus { features, parts })
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    /// A seeded random subset of `ceil(fraction * P)` partitions (at least
    /// one), kept in their original order.
    pub fn fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(GsptError::config("fraction must lie in (0, 1]"));
        }
        let total = self.parts.len();
        let keep = ((fraction * total as f64).ceil() as usize).clamp(1, total);
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng::stream(rng::purpose(seed, "corpus-fraction"), &[]));
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        Corpus::new(
            self.features.clone(),
            chosen.into_iter().map(|p| self.parts[p].clone()).collect(),
        )
    }

    /// `epochs * Σ_p ceil(n_p / batch_size)`.
    pub fn total_steps(&self, epochs: usize, batch_size: usize) -> u64 {
        let per_epoch: usize = self.parts.iter().map(|p| p.nodes.len().div_ceil(batch_size)).sum();
        (epochs * per_epoch) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub partition: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub opt: AdamW,
    pub step: u64,
    pub seed: u64,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>, weight_decay: f64, seed: u64) -> Self {
        let decay = params.layout.decay_mask();
        let opt = AdamW::new(params.data.len(), weight_decay, decay);
        TrainState {
            params,
            opt,
            step: 0,
            seed,
            history: Vec::new(),
        }
    }

    /// Mean training loss of each epoch, in epoch order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.history.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        let mut sum = vec![0.0; epochs];
        let mut count = vec![0usize; epochs];
        for r in &self.history {
            sum[r.epoch] += r.loss;
            count[r.epoch] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect()
    }
}

/// Forward, backward and one optimizer update on a prepared batch.
pub fn train_step(
    state: &mut TrainState,
    batch: &[MaskedSequence],
    features: &FeatureMatrix,
    dropout: &DropoutConfig,
    lr: f64,
) -> Result<f64> {
    let dropout_seed = rng::derive(rng::purpose(state.seed, "dropout"), &[state.step]);
    let (stats, grads) = batch_loss_grad(&state.params, batch, features, dropout, Some(dropout_seed))?;
    if stats.zero_norm > 0 {
        debug!("step {}: {} zero-norm cosine terms", state.step, stats.zero_norm);
    }
    state.opt.step(&mut state.params.data, &grads.data, lr);
    state.step += 1;
    state.params.check_finite()?;
    Ok(stats.loss)
}

/// Batches of one epoch as `(partition, local start nodes)`.
pub fn epoch_plan(corpus: &Corpus, batch_size: usize, seed: u64, epoch: usize) -> Vec<(usize, Vec<usize>)> {
    let mut batches = Vec::new();
    for (p, part) in corpus.parts.iter().enumerate() {
        let mut order: Vec<usize> = (0..part.nodes.len()).collect();
        order.shuffle(&mut rng::stream(
            rng::purpose(seed, "walk-order"),
            &[epoch as u64, p as u64],
        ));
        for chunk in order.chunks(batch_size) {
            batches.push((p, chunk.to_vec()));
        }
    }
    batches.shuffle(&mut rng::stream(rng::purpose(seed, "batch-order"), &[epoch as u64]));
    batches
}

/// Sequences for one step. Sequence `i` uses its own stream so the result does
/// not depend on scheduling.
pub fn build_batch(
    corpus: &Corpus,
    part: usize,
    walks: &[Vec<u32>],
    starts: &[usize],
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<MaskedSequence>> {
    let pool = &corpus.parts[part].nodes;
    let n_random = corpus.features.n();
    let seq_seed = rng::purpose(cfg.seed, "sequence");
    starts
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut r = rng::stream(seq_seed, &[step, i as u64]);
            build_sequence(&walks[s], cfg.negatives, &cfg.masking, pool, n_random, &mut r)
        })
        .collect()
}

/// Runs the full schedule from `init` (fresh parameters when `None`).
pub fn pretrain(cfg: &TrainConfig, corpus: &Corpus, init: Option<ModelParams<f32>>) -> Result<TrainState> {
    cfg.validate()?;
    if corpus.d() != cfg.hidden_dim {
        return Err(GsptError::Dimension(format!(
            "feature width {} differs from hidden_dim {}",
            corpus.d(),
            cfg.hidden_dim
        )));
    }
    let total = corpus.total_steps(cfg.epochs, cfg.batch_size);
    let schedule = cfg.schedule();
    schedule.validate(total)?;
    let params = match init {
        Some(p) => {
            if p.layout.shape != cfg.shape() {
                return Err(GsptError::Dimension(
                    "initial parameters do not match the configured shape".into(),
                ));
            }
            p
        }
        None => ModelParams::init(Layout::node(cfg.shape())?, rng::purpose(cfg.seed, "init")),
    };
    let mut state = TrainState::new(params, cfg.weight_decay, cfg.seed);
    let walk_seed = rng::purpose(cfg.seed, "walks");
    info!(
        "pretraining: {} partitions, {} steps, d={} L={} H={}",
        corpus.parts.len(),
        total,
        cfg.hidden_dim,
        cfg.n_layers,
        cfg.n_heads
    );
    for epoch in 0..cfg.epochs {
        let walks: Vec<Vec<Vec<u32>>> = corpus
            .parts
            .iter()
            .enumerate()
            .map(|(p, part)| {
                generate_epoch_walks(
                    &part.graph,
                    &cfg.walk,
                    rng::derive(walk_seed, &[p as u64]),
                    epoch as u64,
                )
                .into_iter()
                .map(|w| w.nodes.iter().map(|&u| part.nodes[u as usize]).collect())
                .collect()
            })
            .collect();
        for (part, starts) in epoch_plan(corpus, cfg.batch_size, cfg.seed, epoch) {
            let batch = build_batch(corpus, part, &walks[part], &starts, cfg, state.step)?;
            let lr = schedule.lr_at_step(state.step + 1, total);
            let step = state.step;
            let loss = train_step(&mut state, &batch, &corpus.features, &cfg.dropout, lr)?;
            state.history.push(LossRecord {
                step,
                epoch,
                partition: part,
                loss,
                lr,
            });
        }
        info!("epoch {}: mean loss {:.6}", epoch + 1, state.epoch_losses()[epoch]);
    }
    Ok(state)
}

/// Loss curve CSV `step,partition,loss,lr`.
pub fn write_loss_curve(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut s = String::from("step,partition,loss,lr\n");
    for r in history {
        writeln!(s, "{},{},{:.9},{:e}", r.step, r.partition, r.loss, r.lr).unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}
