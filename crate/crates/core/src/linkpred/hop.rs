//! Hop2Token contexts: token `k` of node `u` is row `u` of `Â^k X`.

use crate::error::{GsptError, Result};
use crate::graph::{build_norm_adjacency, spmm, DenseMatrix, Graph, NormAdjacency};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct HopSequence<T> {
    pub node: u32,
    /// `(n_hops + 1) × d`, row-major.
    pub tokens: Vec<T>,
}

/// `[X, ÂX, ..., Â^K X]` for every node of a graph.
#[derive(Debug, Clone)]
pub struct HopTokens<T> {
    pub hops: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> HopTokens<T> {
    pub fn build(adj: &NormAdjacency, x: &DenseMatrix<T>, n_hops: usize) -> Result<Self> {
        if n_hops == 0 {
            return Err(GsptError::config("n_hops must be >= 1"));
        }
        let mut hops = Vec::with_capacity(n_hops + 1);
        hops.push(x.clone());
        for k in 0..n_hops {
            let next = spmm(adj, &hops[k])?;
            hops.push(next);
        }
        Ok(HopTokens { hops })
    }

    pub fn n(&self) -> usize {
        self.hops[0].n()
    }

    pub fn d(&self) -> usize {
        self.hops[0].d()
    }

    /// Sequence length `n_hops + 1`.
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn sequence(&self, node: usize) -> HopSequence<T> {
        let mut tokens = Vec::with_capacity(self.len() * self.d());
        for h in &self.hops {
            tokens.extend_from_slice(h.row(node));
        }
        HopSequence {
            node: node as u32,
            tokens,
        }
    }
}

pub fn hop2token<T: Scalar>(g: &Graph, x: &DenseMatrix<T>, node: usize, n_hops: usize) -> Result<HopSequence<T>> {
    if node >= g.n() {
        return Err(GsptError::data(format!("node {node} out of range")));
    }
    Ok(HopTokens::build(&build_norm_adjacency(g), x, n_hops)?.sequence(node))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_zero_is_raw_and_isolated_node_is_constant() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2)]).unwrap();
        let x = DenseMatrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -3.0, 0.5]).unwrap();
        let s = hop2token(&g, &x, 1, 3).unwrap();
        assert_eq!(s.tokens.len(), 4 * 2);
        assert_eq!(&s.tokens[..2], x.row(1));
        let iso = hop2token(&g, &x, 3, 3).unwrap();
        for k in 0..4 {
            assert_eq!(&iso.tokens[k * 2..k * 2 + 2], x.row(3));
        }
    }

    #[test]
    fn token_one_matches_hand_computation() {
        // Path 0-1: degrees with self-loop are 2, so Â is all 1/2.
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let x = DenseMatrix::new(2, 1, vec![4.0f64, 2.0]).unwrap();
        let s = hop2token(&g, &x, 0, 1).unwrap();
        assert_eq!(s.tokens, vec![4.0, 3.0]);
        assert!(hop2token(&g, &x, 0, 0).is_err());
    }
}
