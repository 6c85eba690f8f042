//! MLP edge scorer on `h_u ⊙ h_v` with ReLU hidden layers and a scalar logit.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{GsptError, Result};
use crate::nn::ops::{col_sum_acc, linear, matmul_a_bt_acc, matmul_at_b_acc};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScorer<T> {
    /// `[d, hidden.., 1]`.
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

/// Per-layer `(w, b)` offsets into the flat buffer; `w` is `in × out`.
fn ranges(dims: &[usize]) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let mut off = 0;
    dims.windows(2)
        .map(|w| {
            let wr = off..off + w[0] * w[1];
            let br = wr.end..wr.end + w[1];
            off = br.end;
            (wr, br)
        })
        .collect()
}

pub fn scorer_len(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `d → hidden → ... → 1` with `layers` linear maps.
pub fn scorer_dims(d: usize, layers: usize, hidden: usize) -> Result<Vec<usize>> {
    if layers == 0 || d == 0 || (layers > 1 && hidden == 0) {
        return Err(GsptError::config("projector needs >= 1 layer and positive widths"));
    }
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(hidden, layers - 1));
    dims.push(1);
    Ok(dims)
}

#[derive(Debug, Clone)]
pub struct ScorerCache<T> {
    /// Input of every layer; hidden entries are post-ReLU.
    pub acts: Vec<Vec<T>>,
    pub logits: Vec<T>,
}

impl<T: Scalar> EdgeScorer<T> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(dims: Vec<usize>, seed: u64) -> Result<Self> {
        if dims.len() < 2 || *dims.last().unwrap() != 1 || dims.contains(&0) {
            return Err(GsptError::config(format!("bad scorer dims {dims:?}")));
        }
        let mut data = vec![T::zero(); scorer_len(&dims)];
        let mut r = rng::stream(rng::purpose(seed, "scorer-init"), &[]);
        for (i, (wr, _)) in ranges(&dims).into_iter().enumerate() {
            let std = (2.0 / dims[i] as f64).sqrt();
            for w in &mut data[wr] {
                let z: f64 = StandardNormal.sample(&mut r);
                *w = T::of(std * z);
            }
        }
        Ok(EdgeScorer { dims, data })
    }

    pub fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.len() < 2 || scorer_len(&dims) != data.len() {
            return Err(GsptError::data("scorer dims do not match parameter count"));
        }
        Ok(EdgeScorer { dims, data })
    }

    pub fn cast<U: Scalar>(&self) -> EdgeScorer<U> {
        EdgeScorer {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Logits for `b` input rows (`b × d`).
    pub fn forward(&self, input: Vec<T>) -> ScorerCache<T> {
        let b = input.len() / self.dims[0];
        let rs = ranges(&self.dims);
        let last = rs.len() - 1;
        let mut acts = vec![input];
        let mut logits = Vec::new();
        for (i, (wr, br)) in rs.iter().enumerate() {
            let mut y = linear(
                &acts[i],
                &self.data[wr.clone()],
                &self.data[br.clone()],
                b,
                self.dims[i],
                self.dims[i + 1],
            );
            if i == last {
                logits = y;
            } else {
                y.iter_mut().for_each(|v| *v = v.max(T::zero()));
                acts.push(y);
            }
        }
        ScorerCache { acts, logits }
    }

    pub fn score(&self, input: Vec<T>) -> Vec<T> {
        self.forward(input).logits
    }

    /// Returns `(dL/dparams, dL/dinput)` given `dL/dlogits`.
    pub fn backward(&self, cache: &ScorerCache<T>, d_logits: &[T]) -> (Vec<T>, Vec<T>) {
        let b = d_logits.len();
        let rs = ranges(&self.dims);
        let mut grads = vec![T::zero(); self.data.len()];
        let mut dy = d_logits.to_vec();
        for i in (0..rs.len()).rev() {
            let (wr, br) = &rs[i];
            let (k, n) = (self.dims[i], self.dims[i + 1]);
            matmul_at_b_acc(&cache.acts[i], &dy, &mut grads[wr.clone()], b, k, n);
            col_sum_acc(&dy, &mut grads[br.clone()], n);
            let mut dx = vec![T::zero(); b * k];
            matmul_a_bt_acc(&dy, &self.data[wr.clone()], &mut dx, b, k, n);
            if i > 0 {
                for (g, &a) in dx.iter_mut().zip(&cache.acts[i]) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            dy = dx;
        }
        (grads, dy)
    }
}

/// Mean binary cross-entropy with logits and its gradient.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[f64]) -> (f64, Vec<T>) {
    let b = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.f64();
            // softplus(s) - y s, computed stably.
            loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s;
            let sig = 1.0 / (1.0 + (-s).exp());
            T::of((sig - y) / b)
        })
        .collect();
    (loss / b, grad)
}

/// Row-wise Hadamard products `h_u ⊙ h_v`.
pub fn edge_features<T: Scalar>(h: &crate::graph::DenseMatrix<T>, pairs: &[(u32, u32)]) -> Vec<T> {
    let mut out = Vec::with_capacity(pairs.len() * h.d());
    for &(u, v) in pairs {
        out.extend(h.row(u as usize).iter().zip(h.row(v as usize)).map(|(&a, &b)| a * b));
    }
    out
}
