//! Stochastic-block-model datasets with orthonormal class means.
//!
//! Class means depend only on `family_seed`, so graphs drawn with different
//! `seed`s but the same family share their feature geometry.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{GsptError, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    pub d: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub sigma: f64,
    /// Norm of every class mean.
    pub separation: f64,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub family_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1000,
            classes: 5,
            d: 32,
            p_in: 0.02,
            p_out: 0.002,
            sigma: 0.5,
            separation: 1.0,
            train_frac: 0.6,
            valid_frac: 0.2,
            family_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.classes == 0 || self.d == 0 {
            return Err(GsptError::config("n, classes and d must be positive"));
        }
        if self.classes > self.d {
            return Err(GsptError::config(format!(
                "{} orthogonal class means do not fit in d = {}",
                self.classes, self.d
            )));
        }
        if self.classes > self.n {
            return Err(GsptError::config("more classes than nodes"));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(GsptError::config("need 0 <= p_out <= p_in <= 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(GsptError::config("sigma must be finite and >= 0"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(GsptError::config("separation must be finite and > 0"));
        }
        if !(self.train_frac >= 0.0 && self.valid_frac >= 0.0 && self.train_frac + self.valid_frac <= 1.0) {
            return Err(GsptError::config("train_frac + valid_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `C × d` pairwise-orthogonal rows of norm `separation`, by Gram-Schmidt on
/// Gaussian vectors.
pub fn class_means(spec: &SynthSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.d);
    let mut r = rng::stream(rng::purpose(spec.family_seed, "class-means"), &[]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(c);
    while rows.len() < c {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        for u in &rows {
            let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, a) in v.iter_mut().zip(u) {
                *x -= proj * a;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    let data = rows
        .iter()
        .flat_map(|v| v.iter().map(|x| (x * spec.separation) as f32))
        .collect();
    FeatureMatrix::new(c, d, data)
}

/// Balanced class assignment in random order.
fn assign_classes<R: Rng>(n: usize, c: usize, r: &mut R) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..n).map(|u| (u % c) as u32).collect();
    labels.shuffle(r);
    labels
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let means = class_means(spec)?;
    let n = spec.n;
    let labels = assign_classes(n, spec.classes, &mut rng::stream(rng::purpose(seed, "sbm-labels"), &[]));

    let mut edges = Vec::new();
    for u in 0..n {
        let mut r = rng::stream(rng::purpose(seed, "sbm-edges"), &[u as u64]);
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(n, edges)?;

    let noise = Normal::new(0.0, spec.sigma).map_err(|e| GsptError::config(e.to_string()))?;
    let mut r = rng::stream(rng::purpose(seed, "sbm-noise"), &[]);
    let mut data = Vec::with_capacity(n * spec.d);
    for &l in &labels {
        for &m in means.row(l as usize) {
            let eps: f64 = if spec.sigma > 0.0 { noise.sample(&mut r) } else { 0.0 };
            data.push((m as f64 + eps) as f32);
        }
    }
    let features = FeatureMatrix::new(n, spec.d, data)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::purpose(seed, "sbm-splits"), &[]));
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_valid = ((spec.valid_frac * n as f64).round() as usize).min(n - n_train);
    let mut splits = vec![Some(Split::Test); n];
    for (i, &u) in order.iter().enumerate() {
        if i < n_train {
            splits[u] = Some(Split::Train);
        } else if i < n_train + n_valid {
            splits[u] = Some(Split::Valid);
        }
    }

    let mut ds = Dataset::new(graph, features)?;
    ds.labels = Some(labels.into_iter().map(Some).collect());
    ds.splits = Some(splits);
    ds.class_desc = Some(means);
    ds.validate()?;
    Ok(ds)
}

/// Fraction of edges joining same-class endpoints.
pub fn homophily(ds: &Dataset) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (u, v) in ds.graph.edges() {
        total += 1;
        if ds.label(u) == ds.label(v) {
            same += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    same as f64 / total as f64
}
