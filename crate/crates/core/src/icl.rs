//! In-context N-way K-shot node classification with class nodes appended to
//! the graph, and the propagated-feature prototype baseline.
//!
//! A walk on the augmented graph starting at a base node coincides with the
//! walk on the base graph (same stream, same draws) unless a support or class
//! node occupies one of positions `0..l-1`, since only those positions'
//! neighbourhoods shape later steps. [`IclEvaluator`] therefore encodes every
//! base walk once and re-encodes only the affected walks per template; the
//! result is bitwise identical to [`embed_augmented`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{GsptError, Result};
use crate::graph::{build_norm_adjacency, spmm, FeatureMatrix, Graph};
use crate::nn::node_loss::{encode_sequence, pool_nodes};
use crate::nn::ModelParams;
use crate::rng;
use crate::sequence::MaskedSequence;
use crate::walk::{generate_walk, Walk, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Void,
    Desc,
}

impl ClassMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "void" => Some(ClassMode::Void),
            "desc" => Some(ClassMode::Desc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassMode::Void => "void",
            ClassMode::Desc => "desc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub templates: usize,
    /// Walk epochs over the augmented graph per embedding.
    pub repeats: usize,
    pub walk: WalkConfig,
    pub seed: u64,
}

impl Default for IclConfig {
    fn default() -> Self {
        IclConfig {
            n_way: 5,
            k_shot: 3,
            templates: 100,
            repeats: 10,
            walk: WalkConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclTask {
    pub classes: Vec<u32>,
    /// `support[i]` holds the K train nodes of `classes[i]`.
    pub support: Vec<Vec<u32>>,
    pub queries: Vec<u32>,
    /// Index into `classes` of each query's true class.
    pub query_labels: Vec<usize>,
}

/// Template `template` of the family keyed by `seed`. Support comes from the
/// train split, queries are every test node of the chosen classes.
pub fn sample_task(ds: &Dataset, n_way: usize, k_shot: usize, seed: u64, template: u64) -> Result<IclTask> {
    let c = ds.num_classes();
    if ds.labels.is_none() || ds.splits.is_none() {
        return Err(GsptError::data("in-context evaluation needs labels and splits"));
    }
    let mut train: Vec<Vec<u32>> = vec![Vec::new(); c];
    let mut test: Vec<Vec<u32>> = vec![Vec::new(); c];
    for u in 0..ds.n() {
        if let Some(l) = ds.label(u) {
            match ds.split(u) {
                Some(Split::Train) => train[l as usize].push(u as u32),
                Some(Split::Test) => test[l as usize].push(u as u32),
                _ => {}
            }
        }
    }
    let eligible: Vec<u32> = (0..c as u32)
        .filter(|&l| train[l as usize].len() >= k_shot && !test[l as usize].is_empty())
        .collect();
    if n_way == 0 || k_shot == 0 {
        return Err(GsptError::config("N and K must be positive"));
    }
    if eligible.len() < n_way {
        return Err(GsptError::data(format!(
            "only {} classes have {k_shot} train nodes and a test node; {n_way} needed",
            eligible.len()
        )));
    }
    let mut r = rng::stream(rng::purpose(seed, "icl-template"), &[template]);
    let mut classes: Vec<u32> = eligible.choose_multiple(&mut r, n_way).copied().collect();
    classes.sort_unstable();
    let support = classes
        .iter()
        .map(|&l| train[l as usize].choose_multiple(&mut r, k_shot).copied().collect())
        .collect();
    let (mut queries, mut query_labels) = (Vec::new(), Vec::new());
    for (i, &l) in classes.iter().enumerate() {
        queries.extend_from_slice(&test[l as usize]);
        query_labels.extend(std::iter::repeat_n(i, test[l as usize].len()));
    }
    Ok(IclTask {
        classes,
        support,
        queries,
        query_labels,
    })
}

/// Base graph plus class nodes `n..n+N`, each wired to its K support nodes.
/// Class rows are zero (`Void`) or the class description (`Desc`).
pub fn build_augmented_graph(ds: &Dataset, task: &IclTask, mode: ClassMode) -> Result<(Graph, FeatureMatrix)> {
    let n = ds.n();
    let d = ds.d();
    let mut features = ds.features.clone();
    for &c in &task.classes {
        match mode {
            ClassMode::Void => features.append_rows(&vec![0.0; d])?,
            ClassMode::Desc => {
                let desc = ds
                    .class_desc
                    .as_ref()
                    .ok_or_else(|| GsptError::data("desc mode needs class descriptions"))?;
                if c as usize >= desc.n() {
                    return Err(GsptError::data(format!("no description for class {c}")));
                }
                features.append_rows(desc.row(c as usize))?;
            }
        }
    }
    let extra = task
        .support
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&u| (n + i, u as usize)));
    let graph = Graph::from_edges(n + task.classes.len(), ds.graph.edges().chain(extra))?;
    Ok((graph, features))
}

/// Pooled outputs of one walk as `(node, vector)` in first-occurrence order.
type Contribution = Vec<(u32, Vec<f32>)>;

fn encode_walk(params: &ModelParams<f32>, walk: &Walk, x: &FeatureMatrix) -> Result<Contribution> {
    let seq = MaskedSequence::plain(&walk.nodes);
    let cache = encode_sequence(params, &seq, x, None)?;
    Ok(pool_nodes(&cache.out, x.d(), &seq.node_ids)
        .into_iter()
        .map(|p| (p.node, p.h))
        .collect())
}

/// Mean of each node's pooled vectors, accumulated in `(repeat, start)` order.
fn accumulate(n: usize, d: usize, contribs: impl Iterator<Item = Result<Contribution>>) -> Result<FeatureMatrix> {
    let mut sum = vec![0.0f64; n * d];
    let mut count = vec![0usize; n];
    for c in contribs {
        for (v, h) in c? {
            let v = v as usize;
            count[v] += 1;
            for (s, &x) in sum[v * d..(v + 1) * d].iter_mut().zip(&h) {
                *s += x as f64;
            }
        }
    }
    let mut out = Vec::with_capacity(n * d);
    for v in 0..n {
        if count[v] == 0 {
            return Err(GsptError::data(format!("node {v} was never visited")));
        }
        out.extend(sum[v * d..(v + 1) * d].iter().map(|s| (s / count[v] as f64) as f32));
    }
    FeatureMatrix::new(n, d, out)
}

/// Embeddings of every node of `graph`: `repeats` rounds of one walk per
/// node, eval-mode encoder, pooled per node and averaged.
pub fn embed_augmented(
    params: &ModelParams<f32>,
    graph: &Graph,
    x: &FeatureMatrix,
    walk: &WalkConfig,
    repeats: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    let n = graph.n();
    let walk_seed = rng::purpose(seed, "icl-walks");
    let mut contribs = Vec::with_capacity(repeats * n);
    for r in 0..repeats {
        let batch: Vec<Result<Contribution>> = (0..n)
            .into_par_iter()
            .map(|s| encode_walk(params, &generate_walk(graph, s, walk, walk_seed, r as u64), x))
            .collect();
        contribs.extend(batch);
    }
    accumulate(n, x.d(), contribs.into_iter())
}

fn cos_or_neg(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        return -1.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Index of the most cosine-similar prototype; ties go to the lowest index and
/// a zero-norm pair scores −1.
pub fn argmax_cosine(t: &[f32], prototypes: &[&[f32]]) -> usize {
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (i, p) in prototypes.iter().enumerate() {
        let c = cos_or_neg(t, p);
        if c > best_cos {
            best = i;
            best_cos = c;
        }
    }
    best
}

/// Predicted class index for each query from augmented-graph embeddings.
pub fn predict(emb: &FeatureMatrix, task: &IclTask, base_n: usize) -> Vec<usize> {
    let protos: Vec<&[f32]> = (0..task.classes.len()).map(|i| emb.row(base_n + i)).collect();
    task.queries
        .iter()
        .map(|&q| argmax_cosine(emb.row(q as usize), &protos))
        .collect()
}

pub fn accuracy(pred: &[usize], task: &IclTask) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(&task.query_labels).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// `Â^k X` on the base graph.
pub fn propagate_features(ds: &Dataset, hops: usize) -> Result<FeatureMatrix> {
    let adj = build_norm_adjacency(&ds.graph);
    let mut x = ds.features.clone();
    for _ in 0..hops {
        x = spmm(&adj, &x)?;
    }
    Ok(x)
}

/// Nearest support centroid by cosine.
pub fn prototype_classify(x: &FeatureMatrix, task: &IclTask) -> Vec<usize> {
    let d = x.d();
    let centroids: Vec<Vec<f32>> = task
        .support
        .iter()
        .map(|s| {
            let mut c = vec![0.0f64; d];
            for &u in s {
                for (a, &v) in c.iter_mut().zip(x.row(u as usize)) {
                    *a += v as f64;
                }
            }
            c.iter().map(|a| (a / s.len() as f64) as f32).collect()
        })
        .collect();
    let refs: Vec<&[f32]> = centroids.iter().map(|c| c.as_slice()).collect();
    task.queries
        .iter()
        .map(|&q| argmax_cosine(x.row(q as usize), &refs))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IclReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl IclReport {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        IclReport {
            accuracies,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Base-graph walks and their encodings, shared by every template.
pub struct IclEvaluator<'a> {
    params: &'a ModelParams<f32>,
    ds: &'a Dataset,
    cfg: IclConfig,
    walk_seed: u64,
    /// `walks[r * n + s]`.
    walks: Vec<Walk>,
    contribs: Vec<Contribution>,
}

impl<'a> IclEvaluator<'a> {
    pub fn new(params: &'a ModelParams<f32>, ds: &'a Dataset, cfg: IclConfig) -> Result<Self> {
        if params.shape().d != ds.d() {
            return Err(GsptError::Dimension(format!(
                "checkpoint width {} differs from feature width {}",
                params.shape().d,
                ds.d()
            )));
        }
        cfg.walk.validate()?;
        let n = ds.n();
        let walk_seed = rng::purpose(cfg.seed, "icl-walks");
        let walks: Vec<Walk> = (0..cfg.repeats * n)
            .into_par_iter()
            .map(|i| generate_walk(&ds.graph, i % n, &cfg.walk, walk_seed, (i / n) as u64))
            .collect();
        let contribs = walks
            .par_iter()
            .map(|w| encode_walk(params, w, &ds.features))
            .collect::<Result<Vec<_>>>()?;
        Ok(IclEvaluator {
            params,
            ds,
            cfg,
            walk_seed,
            walks,
            contribs,
        })
    }

    pub fn config(&self) -> &IclConfig {
        &self.cfg
    }

    pub fn task(&self, template: u64) -> Result<IclTask> {
        sample_task(self.ds, self.cfg.n_way, self.cfg.k_shot, self.cfg.seed, template)
    }

    /// Augmented-graph embeddings for `task`, equal bitwise to
    /// [`embed_augmented`] with the same configuration.
    pub fn embed(&self, task: &IclTask, mode: ClassMode) -> Result<FeatureMatrix> {
        let (graph, x) = build_augmented_graph(self.ds, task, mode)?;
        let n = self.ds.n();
        let total = graph.n();
        let mut touched = vec![false; total];
        for s in task.support.iter().flatten() {
            touched[*s as usize] = true;
        }
        touched[n..].fill(true);
        let l = self.cfg.walk.walk_length;

        let mut fresh: Vec<(usize, usize)> = Vec::new();
        for r in 0..self.cfg.repeats {
            for s in 0..total {
                let recompute = s >= n
                    || self.walks[r * n + s].nodes[..l - 1]
                        .iter()
                        .any(|&u| touched[u as usize]);
                if recompute {
                    fresh.push((r, s));
                }
            }
        }
        let encoded = fresh
            .par_iter()
            .map(|&(r, s)| {
                let w = generate_walk(&graph, s, &self.cfg.walk, self.walk_seed, r as u64);
                encode_walk(self.params, &w, &x)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut next = fresh.iter().zip(encoded).peekable();
        let mut ordered = Vec::with_capacity(self.cfg.repeats * total);
        for r in 0..self.cfg.repeats {
            for s in 0..total {
                match next.peek() {
                    Some((&(fr, fs), _)) if fr == r && fs == s => {
                        ordered.push(Ok(next.next().unwrap().1));
                    }
                    _ => ordered.push(Ok(self.contribs[r * n + s].clone())),
                }
            }
        }
        accumulate(total, x.d(), ordered.into_iter())
    }

    pub fn evaluate_template(&self, template: u64, mode: ClassMode) -> Result<f64> {
        let task = self.task(template)?;
        let emb = self.embed(&task, mode)?;
        Ok(accuracy(&predict(&emb, &task, self.ds.n()), &task))
    }

    pub fn evaluate(&self, mode: ClassMode) -> Result<IclReport> {
        let accs = (0..self.cfg.templates as u64)
            .map(|t| self.evaluate_template(t, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(IclReport::from_accuracies(accs))
    }
}

/// Full GSPT evaluation over `cfg.templates` templates.
pub fn evaluate_icl(params: &ModelParams<f32>, ds: &Dataset, cfg: &IclConfig, mode: ClassMode) -> Result<IclReport> {
    IclEvaluator::new(params, ds, *cfg)?.evaluate(mode)
}

/// Prototype baseline on `Â^hops X` over the same templates.
pub fn evaluate_prototype(ds: &Dataset, cfg: &IclConfig, hops: usize) -> Result<IclReport> {
    let x = propagate_features(ds, hops)?;
    let accs = (0..cfg.templates as u64)
        .map(|t| {
            let task = sample_task(ds, cfg.n_way, cfg.k_shot, cfg.seed, t)?;
            Ok(accuracy(&prototype_classify(&x, &task), &task))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IclReport::from_accuracies(accs))
}

/// Results CSV `dataset,N,K,mode,template,accuracy` with a closing `mean` and
/// `std` row per mode.
pub fn write_results(path: &Path, dataset: &str, cfg: &IclConfig, rows: &[(String, IclReport)]) -> Result<()> {
    let mut s = String::from("dataset,N,K,mode,template,accuracy\n");
    for (mode, rep) in rows {
        for (t, a) in rep.accuracies.iter().enumerate() {
            writeln!(s, "{dataset},{},{},{mode},{t},{a:.6}", cfg.n_way, cfg.k_shot).unwrap();
        }
        writeln!(s, "{dataset},{},{},{mode},mean,{:.6}", cfg.n_way, cfg.k_shot, rep.mean).unwrap();
        writeln!(s, "{dataset},{},{},{mode},std,{:.6}", cfg.n_way, cfg.k_shot, rep.std).unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}

/// Last-layer attention (head-averaged) from class-node query positions onto
/// labelled base-node positions, indexed `[class][context class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    pub classes: usize,
    /// Attention mass a class-node query puts on all positions of each
    /// context class, averaged over queries.
    pub mass: Vec<Vec<f64>>,
    /// Mean attention weight per (query, context position) pair.
    pub per_position: Vec<Vec<f64>>,
    pub queries: Vec<usize>,
    pairs: Vec<Vec<usize>>,
}

impl AttentionReport {
    /// Mean diagonal cell of the class × context-class mass map over the mean
    /// off-diagonal cell.
    pub fn selectivity(&self) -> f64 {
        cell_ratio(&self.mass, |a, _| self.queries[a] > 0)
    }

    /// Same-class mass over the total mass on all other classes.
    pub fn total_mass_selectivity(&self) -> f64 {
        let (mut same, mut diff) = (0.0, 0.0);
        for c in (0..self.classes).filter(|&c| self.queries[c] > 0) {
            for (b, &m) in self.mass[c].iter().enumerate() {
                if b == c {
                    same += m;
                } else {
                    diff += m;
                }
            }
        }
        same / diff
    }

    /// Same ratio on per-position weights, which removes the effect of how
    /// many positions each class occupies.
    pub fn position_selectivity(&self) -> f64 {
        cell_ratio(&self.per_position, |a, b| self.pairs[a][b] > 0)
    }

    /// CSV `class,context_class,mean_attention` with the mean attention mass.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::from("class,context_class,mean_attention\n");
        for a in 0..self.classes {
            if self.queries[a] == 0 {
                continue;
            }
            for b in 0..self.classes {
                writeln!(s, "{a},{b},{:.9}", self.mass[a][b]).unwrap();
            }
        }
        fs::write(path, s).map_err(|e| GsptError::io(path, e))
    }
}

fn cell_ratio(m: &[Vec<f64>], include: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
    for (a, row) in m.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if !include(a, b) {
                continue;
            }
            if a == b {
                same += v;
                ns += 1;
            } else {
                diff += v;
                nd += 1;
            }
        }
    }
    (same / ns.max(1) as f64) / (diff / nd.max(1) as f64)
}

/// Attention statistics over the augmented-graph walks of the first
/// `templates` tasks that contain a class node.
pub fn attention_report(
    params: &ModelParams<f32>,
    ds: &Dataset,
    cfg: &IclConfig,
    mode: ClassMode,
    templates: usize,
) -> Result<AttentionReport> {
    let c = ds.num_classes();
    let n = ds.n();
    let heads = params.shape().n_heads;
    let walk_seed = rng::purpose(cfg.seed, "icl-walks");
    let mut mass = vec![vec![0.0f64; c]; c];
    let mut queries = vec![0usize; c];
    let mut weight = vec![vec![0.0f64; c]; c];
    let mut pairs = vec![vec![0usize; c]; c];
    for t in 0..templates as u64 {
        let task = sample_task(ds, cfg.n_way, cfg.k_shot, cfg.seed, t)?;
        let (graph, x) = build_augmented_graph(ds, &task, mode)?;
        let walks: Vec<Walk> = (0..cfg.repeats)
            .flat_map(|r| (0..graph.n()).map(move |s| (r, s)))
            .map(|(r, s)| generate_walk(&graph, s, &cfg.walk, walk_seed, r as u64))
            .filter(|w| w.nodes.iter().any(|&u| u as usize >= n))
            .collect();
        let per_walk = walks
            .par_iter()
            .map(|w| {
                let seq = MaskedSequence::plain(&w.nodes);
                let cache = encode_sequence(params, &seq, &x, None)?;
                Ok(cache.last_layer_attention(heads).unwrap_or_default())
            })
            .collect::<Result<Vec<_>>>()?;
        for (w, att) in walks.iter().zip(per_walk) {
            let l = w.nodes.len();
            if att.is_empty() {
                continue;
            }
            for (i, &qi) in w.nodes.iter().enumerate() {
                let qi = qi as usize;
                if qi < n {
                    continue;
                }
                let class = task.classes[qi - n] as usize;
                queries[class] += 1;
                for (j, &kj) in w.nodes.iter().enumerate() {
                    let kj = kj as usize;
                    if kj >= n {
                        continue;
                    }
                    if let Some(lab) = ds.label(kj) {
                        let a = att[i * l + j] as f64;
                        mass[class][lab as usize] += a;
                        weight[class][lab as usize] += a;
                        pairs[class][lab as usize] += 1;
                    }
                }
            }
        }
    }
    for a in 0..c {
        for b in 0..c {
            if queries[a] > 0 {
                mass[a][b] /= queries[a] as f64;
            }
            if pairs[a][b] > 0 {
                weight[a][b] /= pairs[a][b] as f64;
            }
        }
    }
    Ok(AttentionReport {
        classes: c,
        mass,
        per_position: weight,
        queries,
        pairs,
    })
}
