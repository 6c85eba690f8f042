//! Walk → training sequence: distractor suffix injection, then BERT-style
//! corruption of the real walk prefix.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    /// Untouched context position.
    Feature,
    /// Target replaced by the learned mask embedding.
    Mask,
    /// Target whose input feature comes from a random node.
    Random,
    /// Target kept as is.
    Unchanged,
    /// Injected suffix node; never a target.
    Distractor,
}

impl TokenKind {
    pub fn is_target_kind(self) -> bool {
        matches!(self, TokenKind::Mask | TokenKind::Random | TokenKind::Unchanged)
    }
}

/// How the tail of each walk is corrupted before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// No suffix (`GSPT-no-ns`).
    None,
    /// `K` independent uniform nodes (`GSPT-random-ns`).
    Random,
    /// One node repeated `K` times (`GSPT-ours`).
    Distractor,
}

impl NegativeMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "no-ns" => Some(NegativeMode::None),
            "random" | "random-ns" => Some(NegativeMode::Random),
            "distractor" | "ours" => Some(NegativeMode::Distractor),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NegativeMode::None => "GSPT-no-ns",
            NegativeMode::Random => "GSPT-random-ns",
            NegativeMode::Distractor => "GSPT-ours",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub p_random: f64,
    pub p_unchanged: f64,
}

impl MaskingConfig {
    pub fn new(mask_rate: f64, p_random: f64, p_unchanged: f64) -> Result<Self> {
        let cfg = MaskingConfig {
            mask_rate,
            p_random,
            p_unchanged,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(GsptError::config("mask_rate must lie in (0, 1)"));
        }
        if !(self.p_random >= 0.0 && self.p_unchanged >= 0.0) || self.p_random + self.p_unchanged > 1.0 {
            return Err(GsptError::config("p_random and p_unchanged must be >= 0 with sum <= 1"));
        }
        Ok(())
    }

    /// Number of targets among `eligible` positions: `max(1, round(rate * eligible))`.
    pub fn target_count(&self, eligible: usize) -> usize {
        ((self.mask_rate * eligible as f64).round() as usize).clamp(1, eligible.max(1))
    }
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            mask_rate: 0.2,
            p_random: 0.2,
            p_unchanged: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    /// True node identity at every position (used for pooling and targets).
    pub node_ids: Vec<u32>,
    /// Node whose feature is fed as input; differs from `node_ids` only at
    /// `Random` positions.
    pub input_ids: Vec<u32>,
    pub kinds: Vec<TokenKind>,
    /// Target positions, ascending.
    pub targets: Vec<usize>,
    pub distractor_id: Option<u32>,
}

impl MaskedSequence {
    /// An uncorrupted sequence (inference: no targets, no suffix).
    pub fn plain(nodes: &[u32]) -> Self {
        MaskedSequence {
            node_ids: nodes.to_vec(),
            input_ids: nodes.to_vec(),
            kinds: vec![TokenKind::Feature; nodes.len()],
            targets: Vec::new(),
            distractor_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn suffix_len(&self) -> usize {
        self.kinds
            .iter()
            .rev()
            .take_while(|&&k| k == TokenKind::Distractor)
            .count()
    }
}

/// Draws the suffix length `K` uniformly from `{0, ..., l-1}`.
fn draw_suffix_len<R: Rng + ?Sized>(l: usize, rng: &mut R) -> usize {
    rng.random_range(0..l)
}

/// Replaces the last `K` walk positions with a single node drawn uniformly
/// from `pool`. Returns `(node_ids, K, distractor)`; `K = 0` leaves the walk
/// unchanged and yields no distractor.
pub fn inject_distractor<R: Rng + ?Sized>(walk: &[u32], pool: &[u32], rng: &mut R) -> (Vec<u32>, usize, Option<u32>) {
    let l = walk.len();
    let k = draw_suffix_len(l, rng);
    let mut ids = walk.to_vec();
    if k == 0 {
        return (ids, 0, None);
    }
    let vd = pool[rng.random_range(0..pool.len())];
    ids[l - k..].fill(vd);
    (ids, k, Some(vd))
}

/// Replaces the last `K` positions with independent uniform nodes.
pub fn inject_random_suffix<R: Rng + ?Sized>(walk: &[u32], pool: &[u32], rng: &mut R) -> (Vec<u32>, usize) {
    let l = walk.len();
    let k = draw_suffix_len(l, rng);
    let mut ids = walk.to_vec();
    for x in &mut ids[l - k..] {
        *x = pool[rng.random_range(0..pool.len())];
    }
    (ids, k)
}

/// Chooses targets among the first `l - K` positions and assigns each a
/// corruption kind. `RANDOM` inputs are drawn uniformly from `0..n_random`.
pub fn apply_masking<R: Rng + ?Sized>(
    node_ids: Vec<u32>,
    suffix_len: usize,
    distractor_id: Option<u32>,
    cfg: &MaskingConfig,
    n_random: usize,
    rng: &mut R,
) -> Result<MaskedSequence> {
    let l = node_ids.len();
    let eligible = l.saturating_sub(suffix_len);
    if eligible == 0 {
        return Err(GsptError::data("sequence has no maskable positions"));
    }
    let mut kinds = vec![TokenKind::Feature; l];
    kinds[eligible..].fill(TokenKind::Distractor);
    let mut input_ids = node_ids.clone();

    let count = cfg.target_count(eligible);
    let mut targets = index::sample(rng, eligible, count).into_vec();
    targets.sort_unstable();
    for &t in &targets {
        let u: f64 = rng.random();
        kinds[t] = if u < cfg.p_random {
            input_ids[t] = rng.random_range(0..n_random) as u32;
            TokenKind::Random
        } else if u < cfg.p_random + cfg.p_unchanged {
            TokenKind::Unchanged
        } else {
            TokenKind::Mask
        };
    }
    Ok(MaskedSequence {
        node_ids,
        input_ids,
        kinds,
        targets,
        distractor_id,
    })
}

/// Full pretraining transform of one walk.
pub fn build_sequence<R: Rng + ?Sized>(
    walk: &[u32],
    mode: NegativeMode,
    cfg: &MaskingConfig,
    pool: &[u32],
    n_random: usize,
    rng: &mut R,
) -> Result<MaskedSequence> {
    match mode {
        NegativeMode::None => apply_masking(walk.to_vec(), 0, None, cfg, n_random, rng),
        NegativeMode::Distractor => {
            let (ids, k, vd) = inject_distractor(walk, pool, rng);
            apply_masking(ids, k, vd, cfg, n_random, rng)
        }
        NegativeMode::Random => {
            let (ids, k) = inject_random_suffix(walk, pool, rng);
            apply_masking(ids, k, None, cfg, n_random, rng)
        }
    }
}
