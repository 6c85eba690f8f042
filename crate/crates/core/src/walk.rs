//! Second-order (p, q) biased random walks.
//!
//! Transition weights are computed on the fly: no alias tables, neighbor
//! membership is a binary search in the sorted CSR row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};
use crate::graph::Graph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walk_length: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
}

impl WalkConfig {
    pub fn new(walk_length: usize, p: f64, q: f64) -> Result<Self> {
        let cfg = WalkConfig { walk_length, p, q };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 {
            return Err(GsptError::config("walk_length must be >= 2"));
        }
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GsptError::config(format!("{name} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_length: 20,
            p: 0.25,
            q: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub nodes: Vec<u32>,
}

impl Walk {
    pub fn start(&self) -> usize {
        self.nodes[0] as usize
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// One walk per node, walk `i` starting at node `i`.
pub type WalkSet = Vec<Walk>;

/// Unnormalized node2vec weight for stepping `prev -> cur -> next`.
#[inline]
fn weight(g: &Graph, prev: usize, next: usize, inv_p: f64, inv_q: f64) -> f64 {
    if next == prev {
        inv_p
    } else if g.has_edge(prev, next) {
        1.0
    } else {
        inv_q
    }
}

/// Normalized transition probabilities over `neighbors(cur)`, in neighbor
/// order. `prev == cur` marks the first step, which is uniform.
pub fn step_distribution(g: &Graph, prev: usize, cur: usize, cfg: &WalkConfig) -> Result<Vec<(usize, f64)>> {
    let nbrs = g.neighbors(cur);
    if nbrs.is_empty() {
        return Err(GsptError::data(format!("node {cur} has no neighbors")));
    }
    let w: Vec<f64> = if prev == cur {
        vec![1.0; nbrs.len()]
    } else {
        nbrs.iter()
            .map(|&x| weight(g, prev, x as usize, 1.0 / cfg.p, 1.0 / cfg.q))
            .collect()
    };
    let total: f64 = w.iter().sum();
    Ok(nbrs.iter().zip(w).map(|(&x, w)| (x as usize, w / total)).collect())
}

/// Samples the next node from `cur`. Returns `cur` when it has no neighbors.
pub fn sample_step<R: Rng + ?Sized>(g: &Graph, prev: usize, cur: usize, cfg: &WalkConfig, rng: &mut R) -> usize {
    let nbrs = g.neighbors(cur);
    if nbrs.is_empty() {
        return cur;
    }
    // Exactly one draw per non-stalled step.
    let u: f64 = rng.random();
    if prev == cur || nbrs.len() == 1 {
        let i = ((u * nbrs.len() as f64) as usize).min(nbrs.len() - 1);
        return nbrs[i] as usize;
    }
    let (inv_p, inv_q) = (1.0 / cfg.p, 1.0 / cfg.q);
    let total: f64 = nbrs.iter().map(|&x| weight(g, prev, x as usize, inv_p, inv_q)).sum();
    let mut r = u * total;
    for &x in nbrs {
        r -= weight(g, prev, x as usize, inv_p, inv_q);
        if r < 0.0 {
            return x as usize;
        }
    }
    *nbrs.last().unwrap() as usize
}

/// Walk of exactly `walk_length` nodes from `start`, driven by the stream
/// keyed on `(seed, epoch, start)`.
pub fn generate_walk(g: &Graph, start: usize, cfg: &WalkConfig, seed: u64, epoch: u64) -> Walk {
    let mut rng = rng::stream(seed, &[epoch, start as u64]);
    let mut nodes = Vec::with_capacity(cfg.walk_length);
    nodes.push(start as u32);
    let (mut prev, mut cur) = (start, start);
    while nodes.len() < cfg.walk_length {
        let next = sample_step(g, prev, cur, cfg, &mut rng);
        nodes.push(next as u32);
        prev = cur;
        cur = next;
    }
    Walk { nodes }
}

pub fn generate_epoch_walks(g: &Graph, cfg: &WalkConfig, seed: u64, epoch: u64) -> WalkSet {
    (0..g.n())
        .into_par_iter()
        .map(|u| generate_walk(g, u, cfg, seed, epoch))
        .collect()
}

/// Checks the adjacency-or-stall property for every step of a walk.
pub fn is_valid_walk(g: &Graph, walk: &Walk) -> bool {
    walk.nodes.windows(2).all(|w| {
        let (a, b) = (w[0] as usize, w[1] as usize);
        g.has_edge(a, b) || (a == b && g.degree(a) == 0)
    })
}

/// Debug dump: one walk per line, space-separated node ids.
pub fn write_walks(path: &Path, walks: &[Walk]) -> Result<()> {
    let mut s = String::new();
    for w in walks {
        let line: Vec<String> = w.nodes.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}
