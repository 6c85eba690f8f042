//! Negative-sampling ablation and pretraining-fraction scaling reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{GsptError, Result};
use crate::icl::{ClassMode, IclConfig, IclEvaluator};
use crate::linkpred::{evaluate_link_model, finetune, link_pretrain, EdgeSplit, FinetuneConfig, LinkConfig, LinkGraph};
use crate::nn::ModelParams;
use crate::pretrain::{pretrain, Corpus, TrainConfig};
use crate::sequence::NegativeMode;
use crate::synth::{generate, SynthSpec};

/// Offset of the held-out graph's seed within a family run.
pub const HELD_OUT_OFFSET: u64 = 99;

/// `graphs` independent draws from the family with seeds `100·seed + i`,
/// each one corpus partition, plus a held-out draw with seed `100·seed + 99`.
pub fn synthetic_family(spec: &SynthSpec, graphs: usize, seed: u64) -> Result<(Corpus, Dataset)> {
    if graphs == 0 || graphs as u64 >= HELD_OUT_OFFSET {
        return Err(GsptError::config(format!("need 1..{HELD_OUT_OFFSET} corpus graphs")));
    }
    let base = seed.wrapping_mul(100);
    let parts: Vec<Dataset> = (0..graphs as u64)
        .map(|i| generate(spec, base.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let refs: Vec<&Dataset> = parts.iter().collect();
    let held = generate(spec, base.wrapping_add(HELD_OUT_OFFSET))?;
    Ok((Corpus::from_datasets(&refs)?, held))
}

/// In-context accuracy in both class-node modes; `mean` averages the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IclScore {
    pub void: f64,
    pub desc: f64,
    pub mean: f64,
}

pub fn icl_score(params: &ModelParams<f32>, held: &Dataset, cfg: &IclConfig) -> Result<IclScore> {
    let ev = IclEvaluator::new(params, held, *cfg)?;
    let void = ev.evaluate(ClassMode::Void)?.mean;
    let desc = ev.evaluate(ClassMode::Desc)?.mean;
    Ok(IclScore {
        void,
        desc,
        mean: 0.5 * (void + desc),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: NegativeMode,
    pub seed: u64,
    pub score: IclScore,
}

pub const ABLATION_VARIANTS: [NegativeMode; 3] = [NegativeMode::None, NegativeMode::Random, NegativeMode::Distractor];

/// Pretrains one model per negative-sampling variant, identical otherwise,
/// and evaluates each in context on `held`.
pub fn ablation(corpus: &Corpus, held: &Dataset, cfg: &TrainConfig, icl: &IclConfig) -> Result<Vec<AblationRow>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&variant| {
            let run = TrainConfig {
                negatives: variant,
                ..*cfg
            };
            let state = pretrain(&run, corpus, None)?;
            let score = icl_score(&state.params, held, icl)?;
            info!("{}: void {:.4} desc {:.4}", variant.label(), score.void, score.desc);
            Ok(AblationRow {
                variant,
                seed: cfg.seed,
                score,
            })
        })
        .collect()
}

/// CSV `dataset,variant,seed,void_acc,desc_acc,mean_acc`.
pub fn write_ablation(path: &Path, dataset: &str, rows: &[AblationRow]) -> Result<()> {
    let mut s = String::from("dataset,variant,seed,void_acc,desc_acc,mean_acc\n");
    for r in rows {
        writeln!(
            s,
            "{dataset},{},{},{:.6},{:.6},{:.6}",
            r.variant.label(),
            r.seed,
            r.score.void,
            r.score.desc,
            r.score.mean
        )
        .unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}

/// Held-out data for the link half of the scaling study.
pub struct LinkTarget<'a> {
    pub dataset: &'a Dataset,
    pub split: &'a EdgeSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub seed: u64,
    pub icl: Option<IclScore>,
    pub test_mrr: Option<f64>,
}

pub struct ScalingSetup<'a> {
    pub node: Option<(&'a Corpus, &'a Dataset, TrainConfig, IclConfig)>,
    pub link: Option<(&'a Corpus, LinkTarget<'a>, LinkConfig, FinetuneConfig)>,
}

/// Pretrains on each fraction of the corpus partitions (chosen with the run
/// seed) and evaluates whichever tracks are configured.
pub fn scaling(setup: &ScalingSetup, fractions: &[f64], seed: u64) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let icl = match &setup.node {
            Some((corpus, held, cfg, icl)) => {
                let sub = corpus.fraction(f, seed)?;
                let state = pretrain(&TrainConfig { seed, ..*cfg }, &sub, None)?;
                Some(icl_score(&state.params, held, &IclConfig { seed, ..*icl })?)
            }
            None => None,
        };
        let test_mrr = match &setup.link {
            Some((corpus, target, lcfg, fcfg)) => {
                let sub = corpus.fraction(f, seed)?;
                let graphs = LinkGraph::from_corpus(&sub, lcfg.n_hops)?;
                let state = link_pretrain(&LinkConfig { seed, ..*lcfg }, &graphs, None)?;
                let fcfg = FinetuneConfig { seed, ..*fcfg };
                let ft = finetune(state.params, &target.dataset.features, target.split, &fcfg)?;
                Some(evaluate_link_model(&ft.params, &ft.scorer, &target.dataset.features, target.split)?.1)
            }
            None => None,
        };
        info!("fraction {f}: icl {icl:?} mrr {test_mrr:?}");
        rows.push(ScalingRow {
            fraction: f,
            seed,
            icl,
            test_mrr,
        });
    }
    Ok(rows)
}

/// CSV `fraction,seed,icl_void,icl_desc,icl_mean,test_mrr`; missing tracks
/// leave empty cells.
pub fn write_scaling(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    let mut s = String::from("fraction,seed,icl_void,icl_desc,icl_mean,test_mrr\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.fraction,
            r.seed,
            opt(r.icl.map(|i| i.void)),
            opt(r.icl.map(|i| i.desc)),
            opt(r.icl.map(|i| i.mean)),
            opt(r.test_mrr)
        )
        .unwrap();
    }
    fs::write(path, s).map_err(|e| GsptError::io(path, e))
}

/// Ranks starting at 1 with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks. `None`
/// when either side is constant or lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Seed-mean Spearman correlation between fraction and a metric. Seeds where
/// the metric is constant count as 0.
pub fn seed_mean_spearman(rows: &[ScalingRow], metric: impl Fn(&ScalingRow) -> Option<f64>) -> Option<f64> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut rhos = Vec::new();
    for s in seeds {
        let (mut fx, mut my) = (Vec::new(), Vec::new());
        for r in rows.iter().filter(|r| r.seed == s) {
            fx.push(r.fraction);
            my.push(metric(r)?);
        }
        rhos.push(spearman(&fx, &my).unwrap_or(0.0));
    }
    if rhos.is_empty() {
        return None;
    }
    Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
}
