//! Undirected CSR graphs, dense node-feature matrices and the symmetric
//! degree-normalized adjacency `D̃^{-1/2}(A+I)D̃^{-1/2}` shared by feature
//! propagation, hop aggregation and the link decoder.

use rayon::prelude::*;

use crate::error::{GsptError, Result};
use crate::scalar::Scalar;

/// Immutable undirected graph in compressed sparse row form.
///
/// Every undirected edge occupies one slot in each endpoint's row; rows are
/// sorted ascending with no duplicates and no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Edges are symmetrized,
    /// self-loops are dropped and duplicates removed.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n > u32::MAX as usize {
            return Err(GsptError::data(format!("node count {n} exceeds u32 ids")));
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GsptError::data(format!(
                    "edge ({u}, {v}) references node id >= n = {n}"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        Ok(Graph { row_ptr, col_idx })
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
        }
    }

    /// Node count.
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Directed edge-slot count (twice the undirected edge count).
    pub fn m(&self) -> usize {
        self.col_idx.len()
    }

    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|u| self.degree(u)).collect()
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .map(move |&v| (u, v as usize))
                .filter(|&(u, v)| u < v)
        })
    }
}

/// Dense row-major `n × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

/// Node features are stored in 32-bit floats.
pub type FeatureMatrix = DenseMatrix<f32>;

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if d == 0 {
            return Err(GsptError::data("feature dimension must be positive"));
        }
        if data.len() != n * d {
            return Err(GsptError::Dimension(format!(
                "expected {n}x{d} = {} values, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(GsptError::data(format!(
                "non-finite feature at row {}, column {}",
                i / d,
                i % d
            )));
        }
        Ok(DenseMatrix { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        DenseMatrix {
            n,
            d,
            data: vec![T::zero(); n * d],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Appends rows; `rows.len()` must be a multiple of `d`.
    pub fn append_rows(&mut self, rows: &[T]) -> Result<()> {
        if rows.len() % self.d != 0 {
            return Err(GsptError::Dimension(format!(
                "cannot append {} values to width {}",
                rows.len(),
                self.d
            )));
        }
        self.data.extend_from_slice(rows);
        self.n += rows.len() / self.d;
        Ok(())
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DenseMatrix {
            n: rows.len(),
            d: self.d,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// `Â = D̃^{-1/2}(A+I)D̃^{-1/2}` in CSR form, self-loop included in every row.
#[derive(Debug, Clone)]
pub struct NormAdjacency {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weight: Vec<f64>,
}

impl NormAdjacency {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `(column, weight)` pairs of row `u`, sorted by column.
    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[u]..self.row_ptr[u + 1];
        self.col_idx[r.clone()]
            .iter()
            .zip(&self.weight[r])
            .map(|(&c, &w)| (c as usize, w))
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.row(u).find(|&(c, _)| c == v).map_or(0.0, |(_, w)| w)
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }
}

pub fn build_norm_adjacency(g: &Graph) -> NormAdjacency {
    let n = g.n();
    let w = |u: usize, v: usize| 1.0 / (((g.degree(u) + 1) * (g.degree(v) + 1)) as f64).sqrt();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(g.m() + n);
    let mut weight = Vec::with_capacity(g.m() + n);
    row_ptr.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in g.neighbors(u) {
            if !self_done && v as usize > u {
                col_idx.push(u as u32);
                weight.push(w(u, u));
                self_done = true;
            }
            col_idx.push(v);
            weight.push(w(u, v as usize));
        }
        if !self_done {
            col_idx.push(u as u32);
            weight.push(w(u, u));
        }
        row_ptr.push(col_idx.len());
    }
    NormAdjacency {
        row_ptr,
        col_idx,
        weight,
    }
}

/// Sparse-dense product `Â · X`. Rows are computed independently, so the
/// result does not depend on the rayon thread count.
pub fn spmm<T: Scalar>(adj: &NormAdjacency, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if adj.n() != x.n() {
        return Err(GsptError::Dimension(format!(
            "adjacency has {} rows, features have {}",
            adj.n(),
            x.n()
        )));
    }
    let d = x.d();
    let mut out = vec![T::zero(); x.n() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(u, row)| {
        for (v, w) in adj.row(u) {
            let w = T::of(w);
            for (o, &xv) in row.iter_mut().zip(x.row(v)) {
                *o += w * xv;
            }
        }
    });
    Ok(DenseMatrix { n: x.n(), d, data: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_edges_dedups_and_symmetrizes() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        let g = Graph::from_edges(2, [(0, 1), (1, 0), (0, 0)]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
        assert_eq!(g.num_edges(), 1);
        assert!(Graph::from_edges(2, [(0, 2)]).is_err());
    }

    #[test]
    fn csr_invariants() {
        let g = Graph::from_edges(5, [(3, 1), (1, 3), (0, 4), (2, 2), (4, 1)]).unwrap();
        assert_eq!(g.row_ptr()[0], 0);
        assert_eq!(*g.row_ptr().last().unwrap(), g.m());
        for u in 0..g.n() {
            let nb = g.neighbors(u);
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &v in nb {
                assert_ne!(v as usize, u);
                assert!(g.has_edge(v as usize, u));
            }
        }
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 4), (1, 3), (1, 4)]);
    }

    #[test]
    fn norm_adjacency_examples() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let a = build_norm_adjacency(&g);
        for u in 0..2 {
            for v in 0..2 {
                assert!((a.weight(u, v) - 0.5).abs() < 1e-15);
            }
        }
        let iso = build_norm_adjacency(&Graph::empty(1));
        assert_eq!(iso.row(0).collect::<Vec<_>>(), vec![(0, 1.0)]);

        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a = build_norm_adjacency(&star);
        assert!((a.weight(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(a.nnz(), star.m() + 4);
    }

    #[test]
    fn spmm_examples() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let a = build_norm_adjacency(&g);
        let x = DenseMatrix::new(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let y = spmm(&a, &x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);

        let a = build_norm_adjacency(&Graph::empty(3));
        let x = DenseMatrix::new(3, 2, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(spmm(&a, &x).unwrap(), x);

        let z = DenseMatrix::<f32>::zeros(3, 4);
        assert_eq!(spmm(&a, &z).unwrap(), z);

        assert!(spmm(&a, &DenseMatrix::<f32>::zeros(2, 4)).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(DenseMatrix::new(1, 2, vec![1.0f32, f32::NAN]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0f32]).is_err());
    }
}
