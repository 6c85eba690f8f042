//! Mean reciprocal rank with pessimistic ties.

use rayon::prelude::*;

use crate::graph::DenseMatrix;
use crate::scalar::Scalar;

use super::scorer::{edge_features, EdgeScorer};
use super::split::{EdgeSplit, Phase};

/// `1 + #{negatives scoring >= positive}`.
pub fn pessimistic_rank(pos: f64, neg: &[f64]) -> usize {
    1 + neg.iter().filter(|&&s| s >= pos).count()
}

pub fn mrr_from_scores(pos: &[f64], neg: &[Vec<f64>]) -> f64 {
    if pos.is_empty() {
        return 0.0;
    }
    let total: f64 = pos
        .iter()
        .zip(neg)
        .map(|(&p, n)| 1.0 / pessimistic_rank(p, n) as f64)
        .sum();
    total / pos.len() as f64
}

/// Scores every positive and its candidates, then computes the MRR.
pub fn evaluate_mrr<T: Scalar>(h: &DenseMatrix<T>, scorer: &EdgeScorer<T>, split: &EdgeSplit, phase: Phase) -> f64 {
    let (pos_scores, neg_scores) = score_phase(h, scorer, split, phase);
    mrr_from_scores(&pos_scores, &neg_scores)
}

/// `(positive scores, candidate scores)` per evaluation positive.
pub fn score_phase<T: Scalar>(
    h: &DenseMatrix<T>,
    scorer: &EdgeScorer<T>,
    split: &EdgeSplit,
    phase: Phase,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let scored: Vec<(f64, Vec<f64>)> = split
        .positives(phase)
        .par_iter()
        .zip(split.negatives(phase).par_iter())
        .map(|(&(u, v), negs)| {
            let mut pairs = Vec::with_capacity(negs.len() + 1);
            pairs.push((u, v));
            pairs.extend(negs.iter().map(|&w| (u, w)));
            let s = scorer.score(edge_features(h, &pairs));
            (s[0].f64(), s[1..].iter().map(|x| x.f64()).collect())
        })
        .collect();
    scored.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Independent oracle: full descending sort with the positive placed
    /// after every tied negative.
    fn sort_oracle(pos: &[f64], neg: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (&p, n) in pos.iter().zip(neg) {
            let mut all: Vec<(f64, bool)> = n.iter().map(|&s| (s, false)).collect();
            all.push((p, true));
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let rank = all.iter().position(|e| e.1).unwrap() + 1;
            total += 1.0 / rank as f64;
        }
        total / pos.len() as f64
    }

    #[test]
    fn rank_examples() {
        assert_eq!(pessimistic_rank(1.0, &[0.5, 0.2]), 1);
        let pos = [3.0, 3.0, 3.0];
        let neg = vec![vec![1.0, 2.0], vec![4.0, 1.0], vec![5.0, 4.0, 3.0]];
        assert!((mrr_from_scores(&pos, &neg) - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut r = rng::stream(8, &[]);
        for _ in 0..20 {
            let pos: Vec<f64> = (0..30).map(|_| (r.random::<f64>() * 10.0).round()).collect();
            let neg: Vec<Vec<f64>> = (0..30)
                .map(|_| (0..200).map(|_| (r.random::<f64>() * 10.0).round()).collect())
                .collect();
            assert!((mrr_from_scores(&pos, &neg) - sort_oracle(&pos, &neg)).abs() < 1e-12);
        }
    }

    #[test]
    fn injected_ties_never_raise_mrr() {
        let mut r = rng::stream(9, &[]);
        let pos: Vec<f64> = (0..50).map(|_| r.random()).collect();
        let mut neg: Vec<Vec<f64>> = (0..50).map(|_| (0..20).map(|_| r.random()).collect()).collect();
        let mut last = mrr_from_scores(&pos, &neg);
        assert!(last > 0.0 && last <= 1.0);
        for k in 0..20 {
            for (p, n) in pos.iter().zip(neg.iter_mut()) {
                n[k] = *p;
            }
            let now = mrr_from_scores(&pos, &neg);
            assert!(now <= last);
            last = now;
        }
        assert!((last - 1.0 / 21.0).abs() < 1e-15);
    }
}
