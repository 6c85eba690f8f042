//! Flat parameter storage with a named tensor table.
//!
//! All trainable tensors of a model live in one contiguous buffer so the
//! optimizer, gradient accumulation and checkpointing can treat them
//! uniformly. Tensors are stored in declaration order.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Model width; equals the node feature dimension.
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Rows of the positional table (maximum sequence length).
    pub max_len: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return Err(GsptError::config("model dimensions must be positive"));
        }
        if self.d % self.n_heads != 0 {
            return Err(GsptError::config(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.d, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Truncated normal, std 0.02, cut at two standard deviations.
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
    pub init: Init,
}

impl TensorSpec {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Default, Clone)]
pub struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, decay: bool, init: Init) -> Range<usize> {
        let spec = TensorSpec {
            name: name.to_string(),
            rows,
            cols,
            offset: self.len,
            decay,
            init,
        };
        self.len += rows * cols;
        let r = spec.range();
        self.tensors.push(spec);
        r
    }

    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Range<usize> {
        self.add(name, rows, cols, true, Init::Normal)
    }

    pub fn bias(&mut self, name: &str, n: usize) -> Range<usize> {
        self.add(name, 1, n, false, Init::Zeros)
    }

    pub fn finish(self) -> (Vec<TensorSpec>, usize) {
        (self.tensors, self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRanges {
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
}

/// Offsets of the encoder tensors inside a flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderRanges {
    pub pos_emb: Range<usize>,
    pub mask_emb: Range<usize>,
    pub layers: Vec<LayerRanges>,
    pub final_gain: Range<usize>,
    pub final_bias: Range<usize>,
}

impl EncoderRanges {
    pub fn declare(shape: &ModelShape, b: &mut LayoutBuilder) -> Self {
        let d = shape.d;
        let f = shape.ffn_dim;
        let pos_emb = b.add("pos_emb", shape.max_len, d, false, Init::Normal);
        let mask_emb = b.add("mask_emb", 1, d, false, Init::Zeros);
        let layers = (0..shape.n_layers)
            .map(|i| {
                let p = |s: &str| format!("layer{i}.{s}");
                LayerRanges {
                    wq: b.weight(&p("attn.wq"), d, d),
                    bq: b.bias(&p("attn.bq"), d),
                    wk: b.weight(&p("attn.wk"), d, d),
                    bk: b.bias(&p("attn.bk"), d),
                    wv: b.weight(&p("attn.wv"), d, d),
                    bv: b.bias(&p("attn.bv"), d),
                    wo: b.weight(&p("attn.wo"), d, d),
                    bo: b.bias(&p("attn.bo"), d),
                    ln1_gain: b.add(&p("ln1.gain"), 1, d, false, Init::Ones),
                    ln1_bias: b.bias(&p("ln1.bias"), d),
                    w1: b.weight(&p("ffn.w1"), d, f),
                    b1: b.bias(&p("ffn.b1"), f),
                    w2: b.weight(&p("ffn.w2"), f, d),
                    b2: b.bias(&p("ffn.b2"), d),
                    ln2_gain: b.add(&p("ln2.gain"), 1, d, false, Init::Ones),
                    ln2_bias: b.bias(&p("ln2.bias"), d),
                }
            })
            .collect();
        let final_gain = b.add("final_ln.gain", 1, d, false, Init::Ones);
        let final_bias = b.bias("final_ln.bias", d);
        EncoderRanges {
            pos_emb,
            mask_emb,
            layers,
            final_gain,
            final_bias,
        }
    }
}

/// Extra tensors of the link-prediction model: a `2d → d` projection that
/// restores the width after center/hop concatenation, and the linear
/// graph-convolution decoder weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkHeadRanges {
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub dec_w: Range<usize>,
}

impl LinkHeadRanges {
    pub fn declare(d: usize, b: &mut LayoutBuilder) -> Self {
        LinkHeadRanges {
            proj_w: b.weight("link.proj.w", 2 * d, d),
            proj_b: b.bias("link.proj.b", d),
            dec_w: b.weight("link.decoder.w", d, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub shape: ModelShape,
    pub encoder: EncoderRanges,
    pub link: Option<LinkHeadRanges>,
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl Layout {
    pub fn node(shape: ModelShape) -> Result<Arc<Self>> {
        Self::build(shape, false)
    }

    pub fn link(shape: ModelShape) -> Result<Arc<Self>> {
        Self::build(shape, true)
    }

    fn build(shape: ModelShape, link: bool) -> Result<Arc<Self>> {
        shape.validate()?;
        let mut b = LayoutBuilder::default();
        let encoder = EncoderRanges::declare(&shape, &mut b);
        let link = link.then(|| LinkHeadRanges::declare(shape.d, &mut b));
        let (tensors, len) = b.finish();
        Ok(Arc::new(Layout {
            shape,
            encoder,
            link,
            tensors,
            len,
        }))
    }

    /// Per-element weight-decay mask.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.len];
        for t in &self.tensors {
            if t.decay {
                m[t.range()].fill(true);
            }
        }
        m
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn name_of(&self, i: usize) -> &str {
        self.tensors
            .iter()
            .find(|t| t.range().contains(&i))
            .map_or("?", |t| t.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layout: Arc<Layout>,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![T::zero(); layout.len];
        ModelParams { layout, data }
    }

    /// Truncated-normal weights (std 0.02), zero biases and mask embedding,
    /// unit layer-norm gains.
    pub fn init(layout: Arc<Layout>, seed: u64) -> Self {
        let mut p = Self::zeros(layout.clone());
        let mut r = rng::stream(rng::purpose(seed, "init"), &[]);
        for t in &layout.tensors {
            let slot = &mut p.data[t.range()];
            match t.init {
                Init::Zeros => slot.fill(T::zero()),
                Init::Ones => slot.fill(T::one()),
                Init::Normal => {
                    for x in slot.iter_mut() {
                        *x = T::of(0.02 * truncated_normal(&mut r));
                    }
                }
            }
        }
        p
    }

    pub fn shape(&self) -> &ModelShape {
        &self.layout.shape
    }

    #[inline]
    pub fn get(&self, r: &Range<usize>) -> &[T] {
        &self.data[r.clone()]
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(GsptError::numeric(format!(
                "non-finite parameter in {}",
                self.layout.name_of(i)
            ))),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt()
    }
}

fn truncated_normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(r);
        if x.abs() <= 2.0 {
            return x;
        }
    }
}

/// One gradient tensor per parameter tensor, in the same flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub data: Vec<T>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros(len: usize) -> Self {
        GradientSet {
            data: vec![T::zero(); len],
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn check_finite(&self, layout: &Layout) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(GsptError::numeric(format!(
                "non-finite gradient for {}",
                layout.name_of(i)
            ))),
        }
    }
}
