//! Link-track model: per-node Hop2Token encoding, center/hop pooling with a
//! `2d → d` projection, and the linear graph-convolution decoder
//! `H^D = Â H_node W`.

use rayon::prelude::*;

use crate::error::{GsptError, Result};
use crate::graph::{spmm, DenseMatrix, NormAdjacency};
use crate::nn::node_loss::cosine_with_grad;
use crate::nn::ops::{col_sum_acc, linear, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use crate::nn::params::LinkHeadRanges;
use crate::nn::transformer::{backward, embed, embed_backward, forward, DropoutConfig, EncoderCache};
use crate::nn::{GradientSet, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::sequence::{apply_masking, MaskedSequence, MaskingConfig, TokenKind};

use super::hop::HopTokens;

/// Nodes per gradient-accumulation chunk.
const CHUNK: usize = 16;

pub fn link_head(params: &ModelParams<impl Scalar>) -> Result<&LinkHeadRanges> {
    params
        .layout
        .link
        .as_ref()
        .ok_or_else(|| GsptError::config("model has no link head; expected a link-track checkpoint"))
}

/// One masked Hop2Token sequence per node, drawn from stream `(seed, u)`.
/// Every position is maskable, the center token included.
pub fn draw_link_masks(n: usize, n_tokens: usize, cfg: &MaskingConfig, seed: u64) -> Result<Vec<MaskedSequence>> {
    (0..n)
        .map(|u| {
            let mut r = rng::stream(seed, &[u as u64]);
            apply_masking(vec![u as u32; n_tokens], 0, None, cfg, n, &mut r)
        })
        .collect()
}

/// A center enters the loss when its token 0 is a target.
pub fn is_loss_target(seq: &MaskedSequence) -> bool {
    seq.targets.first() == Some(&0)
}

#[derive(Debug, Clone)]
pub struct LinkForward<T> {
    pub caches: Vec<EncoderCache<T>>,
    pub masked: Vec<Vec<bool>>,
    /// `n × 2d` pooled encoder outputs.
    pub z: Vec<T>,
    pub h_node: DenseMatrix<T>,
    /// `Â H_node`.
    pub ah: DenseMatrix<T>,
    pub hd: DenseMatrix<T>,
}

fn node_inputs<T: Scalar>(tokens: &HopTokens<T>, u: usize, seq: Option<&MaskedSequence>) -> (Vec<T>, Vec<bool>) {
    let (l, d) = (tokens.len(), tokens.d());
    let mut content = Vec::with_capacity(l * d);
    let mut masked = vec![false; l];
    for (t, hop) in tokens.hops.iter().enumerate() {
        match seq {
            Some(s) if s.kinds[t] == TokenKind::Mask => {
                masked[t] = true;
                content.extend(std::iter::repeat_n(T::zero(), d));
            }
            Some(s) => content.extend_from_slice(hop.row(s.input_ids[t] as usize)),
            None => content.extend_from_slice(hop.row(u)),
        }
    }
    (content, masked)
}

/// Full-graph forward. `seqs = None` feeds every token unmasked;
/// `train = Some((cfg, seed))` applies dropout from stream `(seed, u)`.
pub fn link_forward<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &HopTokens<T>,
    adj: &NormAdjacency,
    seqs: Option<&[MaskedSequence]>,
    train: Option<(&DropoutConfig, u64)>,
) -> Result<LinkForward<T>> {
    let head = link_head(params)?;
    let (n, d) = (tokens.n(), tokens.d());
    if d != params.shape().d {
        return Err(GsptError::Dimension(format!(
            "features have width {d}, model has {}",
            params.shape().d
        )));
    }
    if tokens.len() > params.shape().max_len {
        return Err(GsptError::Dimension(format!(
            "{} hop tokens exceed max_len {}",
            tokens.len(),
            params.shape().max_len
        )));
    }
    if adj.n() != n {
        return Err(GsptError::Dimension("adjacency and features disagree on n".into()));
    }
    if let Some(s) = seqs {
        if s.len() != n {
            return Err(GsptError::data("need one masked sequence per node"));
        }
    }
    let encoded: Vec<Result<(EncoderCache<T>, Vec<bool>)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let (content, masked) = node_inputs(tokens, u, seqs.map(|s| &s[u]));
            let h0 = embed(params, &content, &masked)?;
            let mut r = train.map(|(_, seed)| rng::stream(seed, &[u as u64]));
            let tr = train.map(|(cfg, _)| cfg).zip(r.as_mut());
            Ok((forward(params, h0, tr)?, masked))
        })
        .collect();
    let mut caches = Vec::with_capacity(n);
    let mut masked = Vec::with_capacity(n);
    for e in encoded {
        let (c, m) = e?;
        caches.push(c);
        masked.push(m);
    }

    let hops = tokens.len() - 1;
    let inv = T::one() / T::of(hops as f64);
    let mut z = vec![T::zero(); n * 2 * d];
    for (u, c) in caches.iter().enumerate() {
        let row = &mut z[u * 2 * d..(u + 1) * 2 * d];
        row[..d].copy_from_slice(&c.out[..d]);
        for t in 1..=hops {
            for (a, &b) in row[d..].iter_mut().zip(&c.out[t * d..(t + 1) * d]) {
                *a += b * inv;
            }
        }
    }
    let h = linear(&z, params.get(&head.proj_w), params.get(&head.proj_b), n, 2 * d, d);
    let h_node = DenseMatrix::new(n, d, h)?;
    let ah = spmm(adj, &h_node)?;
    let hd = decode(params.get(&head.dec_w), &ah)?;
    Ok(LinkForward {
        caches,
        masked,
        z,
        h_node,
        ah,
        hd,
    })
}

/// `H W` for an already aggregated `H = Â H_node`.
pub fn decode<T: Scalar>(w: &[T], ah: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (n, d) = (ah.n(), ah.d());
    let mut out = vec![T::zero(); n * d];
    matmul_acc(ah.data(), w, &mut out, n, d, d);
    DenseMatrix::new(n, d, out)
}

/// Backpropagates `dL/dH^D` through decoder, projection, pooling and every
/// node's encoder.
pub fn link_backward<T: Scalar>(
    params: &ModelParams<T>,
    fwd: &LinkForward<T>,
    adj: &NormAdjacency,
    d_hd: &[T],
) -> Result<GradientSet<T>> {
    let head = link_head(params)?;
    let (n, d) = (fwd.hd.n(), fwd.hd.d());
    let len = params.layout.len;
    let mut grads = GradientSet::zeros(len);

    let w_dec = params.get(&head.dec_w);
    matmul_at_b_acc(fwd.ah.data(), d_hd, &mut grads.data[head.dec_w.clone()], n, d, d);
    let mut d_ah = vec![T::zero(); n * d];
    matmul_a_bt_acc(d_hd, w_dec, &mut d_ah, n, d, d);
    // Â is symmetric, so the adjoint of `Â ·` is `Â ·` again.
    let d_h = spmm(adj, &DenseMatrix::new(n, d, d_ah)?)?;

    matmul_at_b_acc(&fwd.z, d_h.data(), &mut grads.data[head.proj_w.clone()], n, 2 * d, d);
    col_sum_acc(d_h.data(), &mut grads.data[head.proj_b.clone()], d);
    let mut dz = vec![T::zero(); n * 2 * d];
    matmul_a_bt_acc(d_h.data(), params.get(&head.proj_w), &mut dz, n, 2 * d, d);

    let l = fwd.caches.first().map_or(0, |c| c.l);
    let hops = l - 1;
    let inv = T::one() / T::of(hops as f64);
    let parts: Vec<GradientSet<T>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = GradientSet::zeros(len);
            for &u in chunk {
                let dzu = &dz[u * 2 * d..(u + 1) * 2 * d];
                let mut d_out = vec![T::zero(); l * d];
                d_out[..d].copy_from_slice(&dzu[..d]);
                for t in 1..=hops {
                    for (a, &b) in d_out[t * d..(t + 1) * d].iter_mut().zip(&dzu[d..]) {
                        *a = b * inv;
                    }
                }
                let dh0 = backward(params, &fwd.caches[u], &d_out, &mut g);
                embed_backward(params, &dh0, &fwd.masked[u], &mut g);
            }
            g
        })
        .collect();
    for p in &parts {
        grads.add_assign(p);
    }
    grads.check_finite(&params.layout)?;
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLossStats {
    /// Mean `1 - cos(h^D_i, x_i)` over loss centers; 0 when there are none.
    pub loss: f64,
    pub targets: usize,
}

/// Reconstruction loss over centers whose token 0 is a target, and its
/// gradient with respect to `H^D`.
pub fn link_recon_loss<T: Scalar>(
    hd: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    seqs: &[MaskedSequence],
) -> (LinkLossStats, Vec<T>) {
    let d = hd.d();
    let targets: Vec<usize> = (0..hd.n()).filter(|&u| is_loss_target(&seqs[u])).collect();
    let mut grad = vec![T::zero(); hd.n() * d];
    if targets.is_empty() {
        return (LinkLossStats { loss: 0.0, targets: 0 }, grad);
    }
    let m = targets.len() as f64;
    let mut loss = 0.0;
    for &u in &targets {
        match cosine_with_grad(hd.row(u), x.row(u)) {
            Some((c, g)) => {
                loss += 1.0 - c;
                for (a, b) in grad[u * d..(u + 1) * d].iter_mut().zip(g) {
                    *a = T::of(-b.f64() / m);
                }
            }
            None => loss += 1.0,
        }
    }
    (
        LinkLossStats {
            loss: loss / m,
            targets: targets.len(),
        },
        grad,
    )
}

/// Composed masked-reconstruction loss and gradient for one graph.
pub fn link_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &HopTokens<T>,
    adj: &NormAdjacency,
    seqs: &[MaskedSequence],
    train: Option<(&DropoutConfig, u64)>,
) -> Result<(LinkLossStats, GradientSet<T>)> {
    let fwd = link_forward(params, tokens, adj, Some(seqs), train)?;
    let (stats, d_hd) = link_recon_loss(&fwd.hd, &tokens.hops[0], seqs);
    if !stats.loss.is_finite() {
        return Err(GsptError::numeric("non-finite link loss"));
    }
    let grads = link_backward(params, &fwd, adj, &d_hd)?;
    Ok((stats, grads))
}

/// Eval-mode node representations `H^D` with every token visible.
pub fn node_representations<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &HopTokens<T>,
    adj: &NormAdjacency,
) -> Result<DenseMatrix<T>> {
    Ok(link_forward(params, tokens, adj, None, None)?.hd)
}
