//! Train/valid/test edge splits with fixed evaluation negatives.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{GsptError, Result};
use crate::graph::Graph;
use crate::rng;

pub const DEFAULT_EVAL_NEGATIVES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub n: usize,
    pub train: Vec<(u32, u32)>,
    pub valid: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    /// One candidate list per validation positive; candidate `w` stands for
    /// the edge `(u, w)`.
    pub valid_neg: Vec<Vec<u32>>,
    pub test_neg: Vec<Vec<u32>>,
}

impl EdgeSplit {
    pub fn positives(&self, phase: Phase) -> &[(u32, u32)] {
        match phase {
            Phase::Valid => &self.valid,
            Phase::Test => &self.test,
        }
    }

    pub fn negatives(&self, phase: Phase) -> &[Vec<u32>] {
        match phase {
            Phase::Valid => &self.valid_neg,
            Phase::Test => &self.test_neg,
        }
    }

    pub fn train_graph(&self) -> Result<Graph> {
        Graph::from_edges(self.n, self.train.iter().map(|&(u, v)| (u as usize, v as usize)))
    }
}

/// `n_neg` uniform draws `w ≠ u` with `(u, w)` not an edge of `full`.
/// Draws are with replacement.
fn sample_negatives<R: Rng>(full: &Graph, u: usize, n_neg: usize, r: &mut R) -> Result<Vec<u32>> {
    let n = full.n();
    if full.degree(u) + 1 >= n {
        return Err(GsptError::data(format!("node {u} is adjacent to every other node")));
    }
    let mut out = Vec::with_capacity(n_neg);
    while out.len() < n_neg {
        let w = r.random_range(0..n);
        if w != u && !full.has_edge(u, w) {
            out.push(w as u32);
        }
    }
    Ok(out)
}

/// Shuffles the undirected edges and splits them 80/10/10 (rounded). Returns
/// the graph of training edges alongside the split.
pub fn split_edges(g: &Graph, n_neg: usize, seed: u64) -> Result<(Graph, EdgeSplit)> {
    let m = g.num_edges();
    if m < 10 {
        return Err(GsptError::data(format!(
            "graph has {m} edges; need at least 10 to split"
        )));
    }
    let mut edges: Vec<(u32, u32)> = g.edges().map(|(u, v)| (u as u32, v as u32)).collect();
    edges.shuffle(&mut rng::stream(rng::purpose(seed, "edge-split"), &[]));
    let n_train = (0.8 * m as f64).round() as usize;
    let n_valid = (0.1 * m as f64).round() as usize;
    let test = edges.split_off(n_train + n_valid);
    let valid = edges.split_off(n_train);
    let train = edges;

    let neg_seed = rng::purpose(seed, "eval-negatives");
    let draw = |list: &[(u32, u32)], tag: u64| -> Result<Vec<Vec<u32>>> {
        list.iter()
            .enumerate()
            .map(|(i, &(u, _))| sample_negatives(g, u as usize, n_neg, &mut rng::stream(neg_seed, &[tag, i as u64])))
            .collect()
    };
    let valid_neg = draw(&valid, 0)?;
    let test_neg = draw(&test, 1)?;
    let split = EdgeSplit {
        n: g.n(),
        train,
        valid,
        test,
        valid_neg,
        test_neg,
    };
    Ok((split.train_graph()?, split))
}

pub fn write_split(path: &Path, split: &EdgeSplit) -> Result<()> {
    let mut s = String::new();
    for (name, list) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        for &(u, v) in list.iter() {
            writeln!(s, "{u}\t{v}\t{name}").unwrap();
        }
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}

/// One line per evaluation positive, validation positives first.
pub fn write_negatives(path: &Path, split: &EdgeSplit) -> Result<()> {
    let mut s = String::new();
    for phase in [Phase::Valid, Phase::Test] {
        for (&(u, v), negs) in split.positives(phase).iter().zip(split.negatives(phase)) {
            write!(s, "{u}\t{v}").unwrap();
            for w in negs {
                write!(s, "\t{w}").unwrap();
            }
            s.push('\n');
        }
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(GsptError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| GsptError::io(path, e))
}

fn parse_id(path: &Path, lineno: usize, s: &str, n: usize) -> Result<u32> {
    let v: u32 = s
        .parse()
        .map_err(|_| GsptError::format(path, format!("line {lineno}: bad node id {s:?}")))?;
    if v as usize >= n {
        return Err(GsptError::format(
            path,
            format!("line {lineno}: node id {v} >= n = {n}"),
        ));
    }
    Ok(v)
}

/// Reads a split file and its negatives file for a graph of `n` nodes.
pub fn read_split(split_path: &Path, neg_path: &Path, n: usize) -> Result<EdgeSplit> {
    let mut split = EdgeSplit {
        n,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        valid_neg: Vec::new(),
        test_neg: Vec::new(),
    };
    for (i, line) in read_text(split_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(GsptError::format(
                split_path,
                format!("line {}: expected 3 fields", i + 1),
            ));
        }
        let e = (
            parse_id(split_path, i + 1, f[0], n)?,
            parse_id(split_path, i + 1, f[1], n)?,
        );
        match f[2] {
            "train" => split.train.push(e),
            "valid" => split.valid.push(e),
            "test" => split.test.push(e),
            other => {
                return Err(GsptError::format(
                    split_path,
                    format!("line {}: unknown split {other:?}", i + 1),
                ));
            }
        }
    }
    let text = read_text(neg_path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != split.valid.len() + split.test.len() {
        return Err(GsptError::format(
            neg_path,
            format!(
                "{} lines for {} evaluation positives",
                lines.len(),
                split.valid.len() + split.test.len()
            ),
        ));
    }
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(GsptError::format(neg_path, format!("line {}: no negatives", i + 1)));
        }
        let e = (parse_id(neg_path, i + 1, f[0], n)?, parse_id(neg_path, i + 1, f[1], n)?);
        let negs = f[2..]
            .iter()
            .map(|s| parse_id(neg_path, i + 1, s, n))
            .collect::<Result<Vec<u32>>>()?;
        let (pos, list) = if i < split.valid.len() {
            (split.valid[i], &mut split.valid_neg)
        } else {
            (split.test[i - split.valid.len()], &mut split.test_neg)
        };
        if pos != e {
            return Err(GsptError::format(
                neg_path,
                format!("line {}: positive does not match split file", i + 1),
            ));
        }
        list.push(negs);
    }
    Ok(split)
}
