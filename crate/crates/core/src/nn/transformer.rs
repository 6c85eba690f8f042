//! Post-norm Transformer encoder with analytic backward pass.
//!
//! Per layer:
//!
//! ```text
//! x ─► MHSA ─► dropout ─► (+x) ─► LN1 ─► y1 ─► W1·GELU·W2 ─► dropout ─► (+y1) ─► LN2
//! ```
//!
//! followed by a final layer norm over the stack output. Attention is
//! bidirectional. All functions work on one sequence (`l × d`, row-major).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    col_sum_acc, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, matmul_a_bt_acc, matmul_at_b_acc,
    softmax_inplace,
};
use super::params::{GradientSet, ModelParams};
use crate::error::{GsptError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Sublayer outputs (attention projection and feed-forward).
    pub dropout: f64,
    pub attention_dropout: f64,
    pub emb_dropout: f64,
}

impl DropoutConfig {
    pub const NONE: DropoutConfig = DropoutConfig {
        dropout: 0.0,
        attention_dropout: 0.0,
        emb_dropout: 0.0,
    };
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Post-softmax attention, `heads × l × l`, before dropout.
    pub probs: Vec<T>,
    attn_keep: Option<Vec<T>>,
    ctx: Vec<T>,
    out_keep: Option<Vec<T>>,
    ln1_xhat: Vec<T>,
    ln1_inv: Vec<T>,
    y1: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    ffn_keep: Option<Vec<T>>,
    ln2_xhat: Vec<T>,
    ln2_inv: Vec<T>,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    pub l: usize,
    emb_keep: Option<Vec<T>>,
    pub layers: Vec<LayerCache<T>>,
    final_xhat: Vec<T>,
    final_inv: Vec<T>,
    /// Encoder output `H^L`, `l × d`.
    pub out: Vec<T>,
}

impl<T: Scalar> EncoderCache<T> {
    /// Attention of the last layer averaged over heads, `l × l`.
    pub fn last_layer_attention(&self, heads: usize) -> Option<Vec<T>> {
        let layer = self.layers.last()?;
        let l = self.l;
        let mut avg = vec![T::zero(); l * l];
        for h in 0..heads {
            for (a, &p) in avg.iter_mut().zip(&layer.probs[h * l * l..(h + 1) * l * l]) {
                *a += p;
            }
        }
        let inv = T::one() / T::of(heads as f64);
        avg.iter_mut().for_each(|a| *a *= inv);
        Some(avg)
    }
}

fn keep_mask<T: Scalar>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let scale = T::of(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale })
            .collect(),
    )
}

fn apply_keep<T: Scalar>(x: &mut [T], keep: &Option<Vec<T>>) {
    if let Some(k) = keep {
        for (a, &m) in x.iter_mut().zip(k) {
            *a *= m;
        }
    }
}

/// Builds `H⁰`: row `t` is `content[t] + pos_emb[t]`, or `mask_emb + pos_emb[t]`
/// where `masked[t]` is set.
pub fn embed<T: Scalar>(params: &ModelParams<T>, content: &[T], masked: &[bool]) -> Result<Vec<T>> {
    let shape = params.shape();
    let d = shape.d;
    let l = masked.len();
    if content.len() != l * d {
        return Err(GsptError::Dimension(format!(
            "input has {} values, expected {l}x{d}",
            content.len()
        )));
    }
    if l > shape.max_len {
        return Err(GsptError::Dimension(format!(
            "sequence length {l} exceeds positional table of {}",
            shape.max_len
        )));
    }
    let enc = &params.layout.encoder;
    let pos = params.get(&enc.pos_emb);
    let mask = params.get(&enc.mask_emb);
    let mut h = Vec::with_capacity(l * d);
    for t in 0..l {
        let src = if masked[t] { mask } else { &content[t * d..(t + 1) * d] };
        h.extend(src.iter().zip(&pos[t * d..(t + 1) * d]).map(|(&a, &b)| a + b));
    }
    Ok(h)
}

/// Routes `dL/dH⁰` into the positional and mask embedding gradients.
pub fn embed_backward<T: Scalar>(params: &ModelParams<T>, dh0: &[T], masked: &[bool], grads: &mut GradientSet<T>) {
    let d = params.shape().d;
    let enc = &params.layout.encoder;
    for (t, &m) in masked.iter().enumerate() {
        let row = &dh0[t * d..(t + 1) * d];
        let pstart = enc.pos_emb.start + t * d;
        for (g, &x) in grads.data[pstart..pstart + d].iter_mut().zip(row) {
            *g += x;
        }
        if m {
            for (g, &x) in grads.data[enc.mask_emb.clone()].iter_mut().zip(row) {
                *g += x;
            }
        }
    }
}

/// Encoder forward over one sequence. With `train = Some(..)` dropout masks
/// are drawn from the given stream and stored in the cache; `None` is eval
/// mode and fully deterministic.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    h0: Vec<T>,
    mut train: Option<(&DropoutConfig, &mut ChaCha8Rng)>,
) -> Result<EncoderCache<T>> {
    let shape = *params.shape();
    let (d, heads, f) = (shape.d, shape.n_heads, shape.ffn_dim);
    if h0.len() % d != 0 {
        return Err(GsptError::Dimension(format!(
            "input width does not divide model width {d}"
        )));
    }
    let l = h0.len() / d;
    let dh = shape.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();

    let mut x = h0;
    let emb_keep = match train.as_mut() {
        Some((cfg, rng)) => keep_mask(l * d, cfg.emb_dropout, rng),
        None => None,
    };
    apply_keep(&mut x, &emb_keep);

    let mut layers = Vec::with_capacity(shape.n_layers);
    for (li, lr) in params.layout.encoder.layers.iter().enumerate() {
        let q = linear(&x, params.get(&lr.wq), params.get(&lr.bq), l, d, d);
        let k = linear(&x, params.get(&lr.wk), params.get(&lr.bk), l, d, d);
        let v = linear(&x, params.get(&lr.wv), params.get(&lr.bv), l, d, d);

        let mut probs = vec![T::zero(); heads * l * l];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..l {
                let row = &mut probs[(h * l + i) * l..(h * l + i + 1) * l];
                let qi = &q[i * d + cols.start..i * d + cols.end];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale;
                }
                softmax_inplace(row);
            }
        }
        let attn_keep = match train.as_mut() {
            Some((cfg, rng)) => keep_mask(heads * l * l, cfg.attention_dropout, rng),
            None => None,
        };
        let mut ctx = vec![T::zero(); l * d];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..l {
                let base = (h * l + i) * l;
                for j in 0..l {
                    let mut p = probs[base + j];
                    if let Some(keep) = &attn_keep {
                        p *= keep[base + j];
                    }
                    let (crow, vrow) = (&mut ctx[i * d + c0..i * d + c0 + dh], &v[j * d + c0..j * d + c0 + dh]);
                    for (c, &vv) in crow.iter_mut().zip(vrow) {
                        *c += p * vv;
                    }
                }
            }
        }
        let mut a = linear(&ctx, params.get(&lr.wo), params.get(&lr.bo), l, d, d);
        let out_keep = match train.as_mut() {
            Some((cfg, rng)) => keep_mask(l * d, cfg.dropout, rng),
            None => None,
        };
        apply_keep(&mut a, &out_keep);
        for (ai, &xi) in a.iter_mut().zip(&x) {
            *ai += xi;
        }
        let (y1, ln1_xhat, ln1_inv) = layer_norm(&a, params.get(&lr.ln1_gain), params.get(&lr.ln1_bias), d);

        let u = linear(&y1, params.get(&lr.w1), params.get(&lr.b1), l, d, f);
        let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
        let mut fo = linear(&g, params.get(&lr.w2), params.get(&lr.b2), l, f, d);
        let ffn_keep = match train.as_mut() {
            Some((cfg, rng)) => keep_mask(l * d, cfg.dropout, rng),
            None => None,
        };
        apply_keep(&mut fo, &ffn_keep);
        for (fi, &yi) in fo.iter_mut().zip(&y1) {
            *fi += yi;
        }
        let (y2, ln2_xhat, ln2_inv) = layer_norm(&fo, params.get(&lr.ln2_gain), params.get(&lr.ln2_bias), d);
        if y2.iter().any(|z| !z.is_finite()) {
            return Err(GsptError::numeric(format!("non-finite activation in layer {li}")));
        }
        layers.push(LayerCache {
            x,
            q,
            k,
            v,
            probs,
            attn_keep,
            ctx,
            out_keep,
            ln1_xhat,
            ln1_inv,
            y1,
            u,
            g,
            ffn_keep,
            ln2_xhat,
            ln2_inv,
        });
        x = y2;
    }
    let enc = &params.layout.encoder;
    let (out, final_xhat, final_inv) = layer_norm(&x, params.get(&enc.final_gain), params.get(&enc.final_bias), d);
    if out.iter().any(|z| !z.is_finite()) {
        return Err(GsptError::numeric("non-finite activation in final layer norm"));
    }
    Ok(EncoderCache {
        l,
        emb_keep,
        layers,
        final_xhat,
        final_inv,
        out,
    })
}

/// Backpropagates `d_out = dL/dH^L` through the encoder, accumulating into
/// `grads`, and returns `dL/dH⁰`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &EncoderCache<T>,
    d_out: &[T],
    grads: &mut GradientSet<T>,
) -> Vec<T> {
    let shape = *params.shape();
    let (d, heads, f) = (shape.d, shape.n_heads, shape.ffn_dim);
    let l = cache.l;
    let dh = shape.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let enc = &params.layout.encoder;

    let mut dx = {
        let (g_gain, g_bias) = split_two(&mut grads.data, &enc.final_gain, &enc.final_bias);
        layer_norm_backward(
            d_out,
            &cache.final_xhat,
            &cache.final_inv,
            params.get(&enc.final_gain),
            g_gain,
            g_bias,
            d,
        )
    };

    for (lr, c) in enc.layers.iter().zip(&cache.layers).rev() {
        // LN2 and the feed-forward residual.
        let mut dr2 = {
            let (gg, gb) = split_two(&mut grads.data, &lr.ln2_gain, &lr.ln2_bias);
            layer_norm_backward(&dx, &c.ln2_xhat, &c.ln2_inv, params.get(&lr.ln2_gain), gg, gb, d)
        };
        let mut dy1 = dr2.clone();
        apply_keep(&mut dr2, &c.ffn_keep);
        let dfo = dr2;
        matmul_at_b_acc(&c.g, &dfo, &mut grads.data[lr.w2.clone()], l, f, d);
        col_sum_acc(&dfo, &mut grads.data[lr.b2.clone()], d);
        let mut dg = vec![T::zero(); l * f];
        matmul_a_bt_acc(&dfo, params.get(&lr.w2), &mut dg, l, f, d);
        for (z, &u) in dg.iter_mut().zip(&c.u) {
            *z *= gelu_grad(u);
        }
        let du = dg;
        matmul_at_b_acc(&c.y1, &du, &mut grads.data[lr.w1.clone()], l, d, f);
        col_sum_acc(&du, &mut grads.data[lr.b1.clone()], f);
        matmul_a_bt_acc(&du, params.get(&lr.w1), &mut dy1, l, d, f);

        // LN1 and the attention residual.
        let dr1 = {
            let (gg, gb) = split_two(&mut grads.data, &lr.ln1_gain, &lr.ln1_bias);
            layer_norm_backward(&dy1, &c.ln1_xhat, &c.ln1_inv, params.get(&lr.ln1_gain), gg, gb, d)
        };
        let mut dxl = dr1.clone();
        let mut da = dr1;
        apply_keep(&mut da, &c.out_keep);
        matmul_at_b_acc(&c.ctx, &da, &mut grads.data[lr.wo.clone()], l, d, d);
        col_sum_acc(&da, &mut grads.data[lr.bo.clone()], d);
        let mut dctx = vec![T::zero(); l * d];
        matmul_a_bt_acc(&da, params.get(&lr.wo), &mut dctx, l, d, d);

        let mut dq = vec![T::zero(); l * d];
        let mut dk = vec![T::zero(); l * d];
        let mut dv = vec![T::zero(); l * d];
        let mut dp = vec![T::zero(); l];
        for h in 0..heads {
            let c0 = h * dh;
            let cols = |t: usize| t * d + c0..t * d + c0 + dh;
            for i in 0..l {
                let base = (h * l + i) * l;
                let dctx_i = &dctx[cols(i)];
                // dP' and dV.
                for j in 0..l {
                    let keep = c.attn_keep.as_ref().map_or(T::one(), |m| m[base + j]);
                    let pj = c.probs[base + j] * keep;
                    dp[j] = dot(dctx_i, &c.v[cols(j)]) * keep;
                    if pj != T::zero() {
                        for (g, &x) in dv[cols(j)].iter_mut().zip(dctx_i) {
                            *g += pj * x;
                        }
                    }
                }
                // Softmax backward.
                let p = &c.probs[base..base + l];
                let s: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                for j in 0..l {
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let (qr, kr) = (cols(i), cols(j));
                    for t in 0..dh {
                        dq[qr.start + t] += ds * c.k[kr.start + t];
                        dk[kr.start + t] += ds * c.q[qr.start + t];
                    }
                }
            }
        }
        for (w, b, g) in [(&lr.wq, &lr.bq, &dq), (&lr.wk, &lr.bk, &dk), (&lr.wv, &lr.bv, &dv)] {
            matmul_at_b_acc(&c.x, g, &mut grads.data[w.clone()], l, d, d);
            col_sum_acc(g, &mut grads.data[b.clone()], d);
            matmul_a_bt_acc(g, params.get(w), &mut dxl, l, d, d);
        }
        dx = dxl;
    }
    apply_keep(&mut dx, &cache.emb_keep);
    dx
}

/// Disjoint mutable views of two non-overlapping ranges (first before second).
fn split_two<'a, T>(
    data: &'a mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = data.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
