//! Node-track objective: mean-pool encoder outputs per node and score the
//! targets with `1 - cos(h_i, x_i)` against their true features.

use rayon::prelude::*;

use super::params::{GradientSet, ModelParams};
use super::transformer::{backward, embed, embed_backward, forward, DropoutConfig, EncoderCache};
use crate::error::{GsptError, Result};
use crate::graph::DenseMatrix;
use crate::rng;
use crate::scalar::Scalar;
use crate::sequence::{MaskedSequence, TokenKind};

/// Sequences per gradient-accumulation chunk. Fixed so that the summation
/// order, and therefore the result, is independent of the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PooledNode<T> {
    pub node: u32,
    pub positions: Vec<usize>,
    pub h: Vec<T>,
}

/// Mean of the output rows of every position holding the same node id, in
/// order of first occurrence.
pub fn pool_nodes<T: Scalar>(out: &[T], d: usize, node_ids: &[u32]) -> Vec<PooledNode<T>> {
    let mut pooled: Vec<PooledNode<T>> = Vec::new();
    for (t, &v) in node_ids.iter().enumerate() {
        match pooled.iter_mut().find(|p| p.node == v) {
            Some(p) => p.positions.push(t),
            None => pooled.push(PooledNode {
                node: v,
                positions: vec![t],
                h: Vec::new(),
            }),
        }
    }
    for p in &mut pooled {
        let mut h = vec![T::zero(); d];
        for &t in &p.positions {
            for (a, &b) in h.iter_mut().zip(&out[t * d..(t + 1) * d]) {
                *a += b;
            }
        }
        let inv = T::one() / T::of(p.positions.len() as f64);
        h.iter_mut().for_each(|a| *a *= inv);
        p.h = h;
    }
    pooled
}

/// Cosine similarity and its gradient with respect to `h`. `None` when either
/// vector has zero norm.
pub fn cosine_with_grad<T: Scalar>(h: &[T], x: &[T]) -> Option<(f64, Vec<T>)> {
    let hh: f64 = h.iter().map(|a| a.f64() * a.f64()).sum();
    let xx: f64 = x.iter().map(|a| a.f64() * a.f64()).sum();
    if hh == 0.0 || xx == 0.0 {
        return None;
    }
    let hx: f64 = h.iter().zip(x).map(|(a, b)| a.f64() * b.f64()).sum();
    let (nh, nx) = (hh.sqrt(), xx.sqrt());
    let cos = hx / (nh * nx);
    let grad = h
        .iter()
        .zip(x)
        .map(|(a, b)| T::of(b.f64() / (nh * nx) - cos * a.f64() / hh))
        .collect();
    Some((cos, grad))
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<f64> {
    let aa: f64 = a.iter().map(|v| v.f64() * v.f64()).sum();
    let bb: f64 = b.iter().map(|v| v.f64() * v.f64()).sum();
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum();
    Some(ab / (aa.sqrt() * bb.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconLoss {
    /// `(1/m) Σ (1 - cos)` over target positions.
    pub loss: f64,
    pub cosines: Vec<f64>,
    /// Terms where `h_i` or `x_i` had zero norm (counted as `cos = 0`).
    pub zero_norm: usize,
}

/// Reconstruction loss of one sequence given its pooled outputs.
pub fn recon_loss<T: Scalar>(pooled: &[PooledNode<T>], seq: &MaskedSequence, x: &DenseMatrix<T>) -> Result<ReconLoss> {
    let mut cosines = Vec::with_capacity(seq.targets.len());
    let mut zero_norm = 0;
    for &t in &seq.targets {
        let v = seq.node_ids[t];
        let p = pooled
            .iter()
            .find(|p| p.node == v)
            .ok_or_else(|| GsptError::data(format!("target node {v} has no pooled vector")))?;
        match cosine(&p.h, x.row(v as usize)) {
            Some(c) => cosines.push(c),
            None => {
                zero_norm += 1;
                cosines.push(0.0);
            }
        }
    }
    let m = cosines.len().max(1) as f64;
    let loss = cosines.iter().map(|c| 1.0 - c).sum::<f64>() / m;
    Ok(ReconLoss {
        loss,
        cosines,
        zero_norm,
    })
}

fn sequence_inputs<T: Scalar>(seq: &MaskedSequence, x: &DenseMatrix<T>) -> (Vec<T>, Vec<bool>) {
    let d = x.d();
    let mut content = Vec::with_capacity(seq.len() * d);
    let mut masked = Vec::with_capacity(seq.len());
    for (t, &k) in seq.kinds.iter().enumerate() {
        let m = k == TokenKind::Mask;
        masked.push(m);
        if m {
            content.extend(std::iter::repeat_n(T::zero(), d));
        } else {
            content.extend_from_slice(x.row(seq.input_ids[t] as usize));
        }
    }
    (content, masked)
}

/// Encoder forward for one sequence, honoring mask/random/unchanged kinds.
pub fn encode_sequence<T: Scalar>(
    params: &ModelParams<T>,
    seq: &MaskedSequence,
    x: &DenseMatrix<T>,
    train: Option<(&DropoutConfig, &mut rand_chacha::ChaCha8Rng)>,
) -> Result<EncoderCache<T>> {
    if x.d() != params.shape().d {
        return Err(GsptError::Dimension(format!(
            "feature width {} differs from model width {}",
            x.d(),
            params.shape().d
        )));
    }
    let (content, masked) = sequence_inputs(seq, x);
    let h0 = embed(params, &content, &masked)?;
    forward(params, h0, train)
}

/// Loss and gradient contribution of one sequence; gradients are scaled by
/// `weight` before accumulation.
pub fn sequence_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    seq: &MaskedSequence,
    x: &DenseMatrix<T>,
    train: Option<(&DropoutConfig, &mut rand_chacha::ChaCha8Rng)>,
    weight: T,
    grads: &mut GradientSet<T>,
) -> Result<ReconLoss> {
    let d = x.d();
    let cache = encode_sequence(params, seq, x, train)?;
    let pooled = pool_nodes(&cache.out, d, &seq.node_ids);
    let report = recon_loss(&pooled, seq, x)?;
    if seq.targets.is_empty() {
        return Ok(report);
    }
    let m = seq.targets.len() as f64;
    let mut d_out = vec![T::zero(); cache.out.len()];
    for &t in &seq.targets {
        let v = seq.node_ids[t];
        let p = pooled.iter().find(|p| p.node == v).unwrap();
        if let Some((_, dcos)) = cosine_with_grad(&p.h, x.row(v as usize)) {
            // d(1 - cos)/dh spread evenly over the node's positions.
            let coef = weight * T::of(-1.0 / (m * p.positions.len() as f64));
            for &pos in &p.positions {
                for (g, &dc) in d_out[pos * d..(pos + 1) * d].iter_mut().zip(&dcos) {
                    *g += coef * dc;
                }
            }
        }
    }
    let (_, masked) = sequence_inputs(seq, x);
    let dh0 = backward(params, &cache, &d_out, grads);
    embed_backward(params, &dh0, &masked, grads);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean over sequences of the per-sequence reconstruction loss.
    pub loss: f64,
    pub targets: usize,
    pub zero_norm: usize,
}

/// Mean loss over the batch and its gradient. `train_seed = None` runs in eval
/// mode; otherwise sequence `i` draws dropout from stream `(train_seed, i)`.
pub fn batch_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[MaskedSequence],
    x: &DenseMatrix<T>,
    dropout: &DropoutConfig,
    train_seed: Option<u64>,
) -> Result<(BatchStats, GradientSet<T>)> {
    if seqs.is_empty() {
        return Err(GsptError::data("empty batch"));
    }
    let weight = T::one() / T::of(seqs.len() as f64);
    let len = params.layout.len;
    let chunks: Vec<Result<(GradientSet<T>, f64, usize, usize)>> = seqs
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = GradientSet::zeros(len);
            let (mut loss, mut targets, mut zero) = (0.0, 0, 0);
            for (j, seq) in chunk.iter().enumerate() {
                let idx = (ci * CHUNK + j) as u64;
                let mut r = train_seed.map(|s| rng::stream(s, &[idx]));
                let train = r.as_mut().map(|r| (dropout, r));
                let rep = sequence_loss_grad(params, seq, x, train, weight, &mut g)?;
                loss += rep.loss;
                targets += rep.cosines.len();
                zero += rep.zero_norm;
            }
            Ok((g, loss, targets, zero))
        })
        .collect();
    let mut total = GradientSet::zeros(len);
    let mut stats = BatchStats {
        loss: 0.0,
        targets: 0,
        zero_norm: 0,
    };
    for c in chunks {
        let (g, loss, targets, zero) = c?;
        total.add_assign(&g);
        stats.loss += loss;
        stats.targets += targets;
        stats.zero_norm += zero;
    }
    stats.loss /= seqs.len() as f64;
    total.check_finite(&params.layout)?;
    if !stats.loss.is_finite() {
        return Err(GsptError::numeric("non-finite batch loss"));
    }
    Ok((stats, total))
}

/// Eval-mode mean loss without gradients.
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, seqs: &[MaskedSequence], x: &DenseMatrix<T>) -> Result<f64> {
    let losses: Vec<Result<f64>> = seqs
        .par_iter()
        .map(|s| {
            let c = encode_sequence(params, s, x, None)?;
            let pooled = pool_nodes(&c.out, x.d(), &s.node_ids);
            Ok(recon_loss(&pooled, s, x)?.loss)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / seqs.len() as f64)
}
