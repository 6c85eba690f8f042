//! Link-track masked pretraining (one whole graph per step) and supervised
//! fine-tuning with the edge scorer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};
use crate::graph::{build_norm_adjacency, DenseMatrix, FeatureMatrix, Graph, NormAdjacency};
use crate::nn::{DropoutConfig, Layout, ModelParams, ModelShape};
use crate::optim::{AdamW, Schedule};
use crate::pretrain::{Corpus, LossRecord, TrainState};
use crate::rng;
use crate::sequence::MaskingConfig;

use super::hop::HopTokens;
use super::model::{draw_link_masks, link_backward, link_forward, link_loss_grad, node_representations};
use super::mrr::evaluate_mrr;
use super::scorer::{bce_with_logits, edge_features, scorer_dims, EdgeScorer};
use super::split::{EdgeSplit, Phase, DEFAULT_EVAL_NEGATIVES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_updates: u64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: DropoutConfig,
    pub masking: MaskingConfig,
    pub n_hops: usize,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            epochs: 100,
            peak_lr: 1e-3,
            end_lr: 1e-4,
            warmup_updates: 100,
            weight_decay: 0.0,
            hidden_dim: 384,
            ffn_dim: 768,
            n_layers: 2,
            n_heads: 8,
            dropout: DropoutConfig {
                dropout: 0.1,
                attention_dropout: 0.1,
                emb_dropout: 0.0,
            },
            masking: MaskingConfig {
                mask_rate: 0.5,
                p_random: 0.0,
                p_unchanged: 0.0,
            },
            n_hops: 3,
            seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            d: self.hidden_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            max_len: self.n_hops + 1,
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
        if self.epochs == 0 {
            return Err(GsptError::config("epochs must be positive"));
        }
        if self.n_hops == 0 {
            return Err(GsptError::config("n_hops must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GsptError::config("weight_decay must be >= 0"));
        }
        validate_dropout(&self.dropout)?;
        self.shape().validate()?;
        self.masking.validate()
    }
}

fn validate_dropout(d: &DropoutConfig) -> Result<()> {
    for (name, p) in [
        ("dropout", d.dropout),
        ("attention_dropout", d.attention_dropout),
        ("emb_dropout", d.emb_dropout),
    ] {
        if !(0.0..1.0).contains(&p) {
            return Err(GsptError::config(format!("{name} must lie in [0, 1)")));
        }
    }
    Ok(())
}

/// A graph prepared for the link model: its `Â` and hop tokens.
#[derive(Debug, Clone)]
pub struct LinkGraph {
    pub adj: NormAdjacency,
    pub tokens: HopTokens<f32>,
}

impl LinkGraph {
    pub fn new(g: &Graph, x: &FeatureMatrix, n_hops: usize) -> Result<Self> {
        if g.n() != x.n() {
            return Err(GsptError::data("graph and features disagree on n"));
        }
        let adj = build_norm_adjacency(g);
        let tokens = HopTokens::build(&adj, x, n_hops)?;
        Ok(LinkGraph { adj, tokens })
    }

    pub fn n(&self) -> usize {
        self.tokens.n()
    }

    /// One graph per corpus partition, with the partition's feature rows.
    pub fn from_corpus(corpus: &Corpus, n_hops: usize) -> Result<Vec<Self>> {
        corpus
            .parts
            .iter()
            .map(|p| {
                let rows: Vec<usize> = p.nodes.iter().map(|&u| u as usize).collect();
                LinkGraph::new(&p.graph, &corpus.features.select_rows(&rows), n_hops)
            })
            .collect()
    }
}

pub fn fresh_link_params(cfg: &LinkConfig) -> Result<ModelParams<f32>> {
    Ok(ModelParams::init(
        Layout::link(cfg.shape())?,
        rng::purpose(cfg.seed, "link-init"),
    ))
}

/// Masked pretraining; every epoch visits each graph once in a shuffled order.
pub fn link_pretrain(cfg: &LinkConfig, graphs: &[LinkGraph], init: Option<ModelParams<f32>>) -> Result<TrainState> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(GsptError::data("empty link corpus"));
    }
    if let Some(g) = graphs.iter().find(|g| g.tokens.d() != cfg.hidden_dim) {
        return Err(GsptError::Dimension(format!(
            "feature width {} differs from hidden_dim {}",
            g.tokens.d(),
            cfg.hidden_dim
        )));
    }
    if let Some(g) = graphs.iter().find(|g| g.tokens.len() != cfg.n_hops + 1) {
        return Err(GsptError::config(format!(
            "graph built with {} hops, config says {}",
            g.tokens.len() - 1,
            cfg.n_hops
        )));
    }
    let total = (cfg.epochs * graphs.len()) as u64;
    let schedule = cfg.schedule();
    schedule.validate(total)?;
    let params = match init {
        Some(p) if p.layout.shape != cfg.shape() || p.layout.link.is_none() => {
            return Err(GsptError::Dimension(
                "initial parameters do not match the link shape".into(),
            ));
        }
        Some(p) => p,
        None => fresh_link_params(cfg)?,
    };
    let mut state = TrainState::new(params, cfg.weight_decay, cfg.seed);
    let (mask_seed, drop_seed) = (
        rng::purpose(cfg.seed, "link-mask"),
        rng::purpose(cfg.seed, "link-dropout"),
    );
    info!("link pretraining: {} graphs, {} steps", graphs.len(), total);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut rng::stream(rng::purpose(cfg.seed, "link-order"), &[epoch as u64]));
        for p in order {
            let g = &graphs[p];
            let step = state.step;
            let seqs = draw_link_masks(g.n(), g.tokens.len(), &cfg.masking, rng::derive(mask_seed, &[step]))?;
            let train = Some((&cfg.dropout, rng::derive(drop_seed, &[step])));
            let (stats, grads) = link_loss_grad(&state.params, &g.tokens, &g.adj, &seqs, train)?;
            let lr = schedule.lr_at_step(step + 1, total);
            state.opt.step(&mut state.params.data, &grads.data, lr);
            state.step += 1;
            state.params.check_finite()?;
            state.history.push(LossRecord {
                step,
                epoch,
                partition: p,
                loss: stats.loss,
                lr,
            });
        }
        info!("link epoch {}: mean loss {:.6}", epoch + 1, state.epoch_losses()[epoch]);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Edges (positives plus negatives) per step.
    pub batch_size: usize,
    pub projector_layers: usize,
    pub projector_dim: usize,
    pub dropout: DropoutConfig,
    pub eval_negatives: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-3,
            epochs: 1000,
            patience: 20,
            batch_size: 4096,
            projector_layers: 3,
            projector_dim: 256,
            dropout: LinkConfig::default().dropout,
            eval_negatives: DEFAULT_EVAL_NEGATIVES,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GsptError::config("lr must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_negatives == 0 {
            return Err(GsptError::config(
                "epochs, batch_size and eval_negatives must be positive",
            ));
        }
        validate_dropout(&self.dropout)?;
        scorer_dims(1, self.projector_layers, self.projector_dim).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Parameters of the best validation epoch.
    pub params: ModelParams<f32>,
    pub scorer: EdgeScorer<f32>,
    pub best_epoch: usize,
    pub valid_mrr: f64,
    pub history: Vec<FinetuneEpoch>,
}

/// One `(u, w, 0)` per training positive `(u, v)`, with `w` a uniform
/// non-neighbor of `u` in the training graph.
fn epoch_negatives(train_g: &Graph, split: &EdgeSplit, seed: u64, epoch: usize) -> Vec<(u32, u32)> {
    let n = train_g.n();
    let mut r = rng::stream(rng::purpose(seed, "train-negatives"), &[epoch as u64]);
    split
        .train
        .iter()
        .map(|&(u, _)| {
            let u = u as usize;
            loop {
                let w = r.random_range(0..n);
                if w != u && !train_g.has_edge(u, w) {
                    return (u as u32, w as u32);
                }
            }
        })
        .collect()
}

/// End-to-end fine-tuning of `init` and a fresh scorer on the training edges,
/// with early stopping on validation MRR. Both optimizers use a constant
/// learning rate and no weight decay.
pub fn finetune(
    init: ModelParams<f32>,
    x: &FeatureMatrix,
    split: &EdgeSplit,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if init.layout.link.is_none() {
        return Err(GsptError::config("fine-tuning needs a link-track model"));
    }
    if x.n() != split.n {
        return Err(GsptError::data("features and split disagree on n"));
    }
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(GsptError::data("split has no training or validation edges"));
    }
    let n_hops = init.shape().max_len - 1;
    let train_g = split.train_graph()?;
    if let Some(&(u, _)) = split
        .train
        .iter()
        .find(|&&(u, _)| train_g.degree(u as usize) + 1 >= train_g.n())
    {
        return Err(GsptError::data(format!("node {u} has no training non-neighbor")));
    }
    let lg = LinkGraph::new(&train_g, x, n_hops)?;
    let d = init.shape().d;
    let mut params = init;
    let mut scorer = EdgeScorer::<f32>::init(scorer_dims(d, cfg.projector_layers, cfg.projector_dim)?, cfg.seed)?;
    let decay = vec![false; params.data.len()];
    let mut opt = AdamW::new(params.data.len(), 0.0, decay);
    let mut sopt = AdamW::new(scorer.data.len(), 0.0, vec![false; scorer.data.len()]);
    let drop_seed = rng::purpose(cfg.seed, "finetune-dropout");

    let mut best = (f64::NEG_INFINITY, 0usize, params.clone(), scorer.clone());
    let mut history = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut samples: Vec<((u32, u32), f64)> = split.train.iter().map(|&e| (e, 1.0)).collect();
        samples.extend(
            epoch_negatives(&train_g, split, cfg.seed, epoch)
                .into_iter()
                .map(|e| (e, 0.0)),
        );
        samples.shuffle(&mut rng::stream(
            rng::purpose(cfg.seed, "finetune-order"),
            &[epoch as u64],
        ));
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let pairs: Vec<(u32, u32)> = batch.iter().map(|b| b.0).collect();
            let labels: Vec<f64> = batch.iter().map(|b| b.1).collect();
            let fwd = link_forward(
                &params,
                &lg.tokens,
                &lg.adj,
                None,
                Some((&cfg.dropout, rng::derive(drop_seed, &[step]))),
            )?;
            let cache = scorer.forward(edge_features(&fwd.hd, &pairs));
            let (loss, d_logits) = bce_with_logits(&cache.logits, &labels);
            if !loss.is_finite() {
                return Err(GsptError::numeric(format!(
                    "non-finite fine-tuning loss at epoch {epoch}"
                )));
            }
            let (sgrad, d_feat) = scorer.backward(&cache, &d_logits);
            let mut d_hd = vec![0.0f32; fwd.hd.n() * d];
            for (i, &(u, v)) in pairs.iter().enumerate() {
                let (u, v) = (u as usize, v as usize);
                let g = &d_feat[i * d..(i + 1) * d];
                for c in 0..d {
                    d_hd[u * d + c] += g[c] * fwd.hd.row(v)[c];
                    d_hd[v * d + c] += g[c] * fwd.hd.row(u)[c];
                }
            }
            let grads = link_backward(&params, &fwd, &lg.adj, &d_hd)?;
            opt.step(&mut params.data, &grads.data, cfg.lr);
            sopt.step(&mut scorer.data, &sgrad, cfg.lr);
            params.check_finite()?;
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let h = node_representations(&params, &lg.tokens, &lg.adj)?;
        let valid_mrr = evaluate_mrr(&h, &scorer, split, Phase::Valid);
        history.push(FinetuneEpoch {
            epoch,
            loss: epoch_loss / samples.len() as f64,
            valid_mrr,
        });
        if valid_mrr > best.0 {
            best = (valid_mrr, epoch, params.clone(), scorer.clone());
        } else if epoch - best.1 >= cfg.patience {
            info!("early stop at epoch {epoch}, best {} at {}", best.0, best.1);
            break;
        }
    }
    let (valid_mrr, best_epoch, params, scorer) = best;
    Ok(FinetuneResult {
        params,
        scorer,
        best_epoch,
        valid_mrr,
        history,
    })
}

/// Validation and test MRR of a fine-tuned model, scoring on the training
/// graph's `Â`.
pub fn evaluate_link_model(
    params: &ModelParams<f32>,
    scorer: &EdgeScorer<f32>,
    x: &FeatureMatrix,
    split: &EdgeSplit,
) -> Result<(f64, f64)> {
    let lg = LinkGraph::new(&split.train_graph()?, x, params.shape().max_len - 1)?;
    let h: DenseMatrix<f32> = node_representations(params, &lg.tokens, &lg.adj)?;
    if h.d() != scorer.input_dim() {
        return Err(GsptError::Dimension(
            "scorer input width differs from model width".into(),
        ));
    }
    Ok((
        evaluate_mrr(&h, scorer, split, Phase::Valid),
        evaluate_mrr(&h, scorer, split, Phase::Test),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub dataset: String,
    pub init: String,
    pub seed: u64,
    pub valid_mrr: f64,
    pub test_mrr: f64,
}

/// CSV `dataset,init,seed,valid_mrr,test_mrr`.
pub fn write_link_results(path: &Path, rows: &[LinkResult]) -> Result<()> {
    let mut s = String::from("dataset,init,seed,valid_mrr,test_mrr\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.6},{:.6}",
            r.dataset, r.init, r.seed, r.valid_mrr, r.test_mrr
        )
        .unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}
