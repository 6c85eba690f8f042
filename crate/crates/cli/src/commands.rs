use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gspt::config::RunConfig;
use gspt::dataset::{load_dataset, save_dataset, Dataset};
use gspt::experiments::{
    ablation, scaling, seed_mean_spearman, synthetic_family, write_ablation, write_scaling, LinkTarget, ScalingSetup,
};
use gspt::icl::{attention_report, evaluate_icl, evaluate_prototype, write_results, ClassMode};
use gspt::linkpred::{
    evaluate_link_model, finetune, fresh_link_params, link_pretrain, read_split, split_edges, write_link_results,
    write_negatives, write_split, EdgeScorer, LinkGraph, LinkResult,
};
use gspt::nn::checkpoint::{Checkpoint, ModelKind};
use gspt::partition::{partition, PartitionMap};
use gspt::pretrain::{pretrain, write_loss_curve, Corpus};
use gspt::synth::generate;
use gspt::{GsptError, Result};
use log::info;

use crate::manifest::{git_describe, RunManifest};
use crate::{Common, ModeArg};

/// Templates whose attention maps go into `attention.csv`.
const ATTENTION_TEMPLATES: usize = 20;

struct Ctx<'a> {
    cfg: RunConfig,
    common: &'a Common,
    outputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.common.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn dataset(&self) -> Result<(Dataset, String)> {
        let dir = self
            .common
            .dataset
            .as_deref()
            .ok_or_else(|| GsptError::config("--dataset is required"))?;
        let name = dir
            .file_name()
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
        Ok((load_dataset(dir)?, name))
    }

    fn checkpoint(&self, kind: ModelKind) -> Result<Option<Checkpoint>> {
        let Some(path) = &self.common.checkpoint else {
            return Ok(None);
        };
        let ck = Checkpoint::load(path)?;
        if ck.meta.kind != kind {
            return Err(GsptError::config(format!(
                "{} holds a {:?} model; this command needs {kind:?}",
                path.display(),
                ck.meta.kind
            )));
        }
        Ok(Some(ck))
    }

    fn require_checkpoint(&self, kind: ModelKind) -> Result<Checkpoint> {
        self.checkpoint(kind)?
            .ok_or_else(|| GsptError::config("--checkpoint is required"))
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).unwrap_or(serde_json::Value::Null)
    }
}

pub fn run(name: &str, common: &Common) -> Result<()> {
    let start = Instant::now();
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(GsptError::config("--threads must be positive"));
        }
        // Fails only when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Some(f) = common.fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(GsptError::config("--fraction must lie in (0, 1]"));
        }
    }
    fs::create_dir_all(&common.out).map_err(|e| GsptError::io(&common.out, e))?;

    let mut ctx = Ctx {
        cfg,
        common,
        outputs: Vec::new(),
    };
    match name {
        "synth" => synth(&mut ctx)?,
        "partition" => partition_cmd(&mut ctx)?,
        "pretrain" => pretrain_cmd(&mut ctx)?,
        "icl-eval" => icl_eval(&mut ctx)?,
        "link-pretrain" => link_pretrain_cmd(&mut ctx)?,
        "link-finetune" => link_finetune(&mut ctx)?,
        "link-eval" => link_eval(&mut ctx)?,
        "ablation" => ablation_cmd(&mut ctx)?,
        "scaling-report" => scaling_report(&mut ctx)?,
        other => return Err(GsptError::config(format!("unknown command {other:?}"))),
    }

    let manifest = RunManifest {
        command: name.to_string(),
        config: ctx.cfg.to_toml_string(),
        seed: ctx.cfg.seed,
        git_describe: git_describe(),
        threads: rayon::current_num_threads(),
        outputs: ctx.outputs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let path = manifest.write(&common.out)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn synth(ctx: &mut Ctx) -> Result<()> {
    let ds = generate(&ctx.cfg.synth_spec(), ctx.cfg.seed)?;
    let dir = ctx.common.out.clone();
    save_dataset(&dir, &ds)?;
    ctx.outputs.push(dir);
    info!("generated {} nodes, {} edges", ds.n(), ds.graph.num_edges());
    Ok(())
}

fn partition_cmd(ctx: &mut Ctx) -> Result<()> {
    let (ds, _) = ctx.dataset()?;
    let pm = partition(&ds.graph, ctx.cfg.partition_size, ctx.cfg.seed)?;
    info!("{} parts, edge cut {}", pm.num_parts(), pm.edge_cut(&ds.graph));
    pm.write(&ctx.out("partition.tsv"))
}

/// The dataset's `partition.tsv` when present, a fresh partition otherwise.
fn corpus_for(ctx: &Ctx, ds: &Dataset) -> Result<Corpus> {
    let saved = ctx.common.dataset.as_deref().map(|d| d.join("partition.tsv"));
    let pm = match saved.filter(|p| p.exists()) {
        Some(p) => PartitionMap::read(&p, ds.n())?,
        None => partition(&ds.graph, ctx.cfg.partition_size, ctx.cfg.seed)?,
    };
    let corpus = Corpus::from_partitions(ds, &pm)?;
    match ctx.common.fraction {
        Some(f) => corpus.fraction(f, ctx.cfg.seed),
        None => Ok(corpus),
    }
}

fn pretrain_cmd(ctx: &mut Ctx) -> Result<()> {
    let (ds, _) = ctx.dataset()?;
    let corpus = corpus_for(ctx, &ds)?;
    let tcfg = ctx.cfg.train_config()?;
    let init = ctx.checkpoint(ModelKind::Node)?.map(|c| c.params);
    let state = pretrain(&tcfg, &corpus, init)?;
    let ck = Checkpoint::new(ModelKind::Node, state.params.clone(), state.step, ctx.config_json());
    ck.save(&ctx.out("model.ckpt"))?;
    write_loss_curve(&ctx.out("loss_curve.csv"), &state.history)
}

fn icl_eval(ctx: &mut Ctx) -> Result<()> {
    let (ds, name) = ctx.dataset()?;
    let ck = ctx.require_checkpoint(ModelKind::Node)?;
    let icfg = ctx.cfg.icl_config();
    let modes = match ctx.common.mode {
        Some(ModeArg::Void) => vec![ClassMode::Void],
        Some(ModeArg::Desc) => vec![ClassMode::Desc],
        None => vec![ClassMode::Void, ClassMode::Desc],
    };
    let mut rows = Vec::new();
    for &mode in &modes {
        let rep = evaluate_icl(&ck.params, &ds, &icfg, mode)?;
        info!("{}: {:.4} ± {:.4}", mode.as_str(), rep.mean, rep.std);
        rows.push((mode.as_str().to_string(), rep));
    }
    let proto = evaluate_prototype(&ds, &icfg, ctx.cfg.icl_prototype_hops)?;
    info!("prototype: {:.4}", proto.mean);
    rows.push(("prototype".to_string(), proto));
    write_results(&ctx.out("icl_results.csv"), &name, &icfg, &rows)?;

    let att = attention_report(
        &ck.params,
        &ds,
        &icfg,
        *modes.last().unwrap(),
        ATTENTION_TEMPLATES.min(icfg.templates),
    )?;
    info!("attention selectivity {:.3}", att.selectivity());
    att.write(&ctx.out("attention.csv"))
}

fn link_pretrain_cmd(ctx: &mut Ctx) -> Result<()> {
    let (ds, _) = ctx.dataset()?;
    let corpus = corpus_for(ctx, &ds)?;
    let lcfg = ctx.cfg.link_config()?;
    let graphs = LinkGraph::from_corpus(&corpus, lcfg.n_hops)?;
    let init = ctx.checkpoint(ModelKind::Link)?.map(|c| c.params);
    let state = link_pretrain(&lcfg, &graphs, init)?;
    let ck = Checkpoint::new(ModelKind::Link, state.params.clone(), state.step, ctx.config_json());
    ck.save(&ctx.out("link_model.ckpt"))?;
    write_loss_curve(&ctx.out("loss_curve.csv"), &state.history)
}

fn link_finetune(ctx: &mut Ctx) -> Result<()> {
    let (ds, name) = ctx.dataset()?;
    let fcfg = ctx.cfg.finetune_config();
    let (init, label) = match ctx.checkpoint(ModelKind::Link)? {
        Some(ck) => (ck.params, "pretrained"),
        None => (fresh_link_params(&ctx.cfg.link_config()?)?, "tfs"),
    };
    let (_, split) = split_edges(&ds.graph, fcfg.eval_negatives, ctx.cfg.seed)?;
    write_split(&ctx.out("split.tsv"), &split)?;
    write_negatives(&ctx.out("negatives.tsv"), &split)?;
    let ft = finetune(init, &ds.features, &split, &fcfg)?;
    let (valid_mrr, test_mrr) = evaluate_link_model(&ft.params, &ft.scorer, &ds.features, &split)?;
    info!("best epoch {}: valid {valid_mrr:.4} test {test_mrr:.4}", ft.best_epoch);
    let ck = Checkpoint::new(ModelKind::Link, ft.params, ft.best_epoch as u64, ctx.config_json())
        .with_scorer(ft.scorer.dims, ft.scorer.data);
    ck.save(&ctx.out("finetuned.ckpt"))?;
    let row = LinkResult {
        dataset: name,
        init: label.into(),
        seed: ctx.cfg.seed,
        valid_mrr,
        test_mrr,
    };
    write_link_results(&ctx.out("link_results.csv"), &[row])
}

fn link_eval(ctx: &mut Ctx) -> Result<()> {
    let (ds, name) = ctx.dataset()?;
    let ck = ctx.require_checkpoint(ModelKind::Link)?;
    let (Some(dims), Some(data)) = (ck.meta.scorer_dims.clone(), ck.scorer.clone()) else {
        return Err(GsptError::config(
            "checkpoint has no edge scorer; run link-finetune first",
        ));
    };
    let scorer = EdgeScorer::from_parts(dims, data)?;
    let dir = ctx
        .common
        .checkpoint
        .as_deref()
        .and_then(Path::parent)
        .unwrap_or(Path::new("."));
    let split = read_split(&dir.join("split.tsv"), &dir.join("negatives.tsv"), ds.n())?;
    let (valid_mrr, test_mrr) = evaluate_link_model(&ck.params, &scorer, &ds.features, &split)?;
    info!("valid {valid_mrr:.4} test {test_mrr:.4}");
    let row = LinkResult {
        dataset: name,
        init: "checkpoint".into(),
        seed: ctx.cfg.seed,
        valid_mrr,
        test_mrr,
    };
    write_link_results(&ctx.out("link_results.csv"), &[row])
}

fn ablation_cmd(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.cfg.synth_spec();
    let mut rows = Vec::new();
    for seed in ctx.cfg.seeds() {
        let mut cfg = ctx.cfg.clone();
        cfg.seed = seed;
        let (corpus, held) = synthetic_family(&spec, cfg.synth_graphs, seed)?;
        rows.extend(ablation(&corpus, &held, &cfg.train_config()?, &cfg.icl_config())?);
    }
    write_ablation(&ctx.out("ablation.csv"), "synthetic", &rows)
}

fn scaling_report(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.cfg.synth_spec();
    let mut rows = Vec::new();
    for seed in ctx.cfg.seeds() {
        let mut cfg = ctx.cfg.clone();
        cfg.seed = seed;
        let (corpus, held) = synthetic_family(&spec, cfg.synth_graphs, seed)?;
        let fcfg = cfg.finetune_config();
        let (_, split) = split_edges(&held.graph, fcfg.eval_negatives, seed)?;
        let setup = ScalingSetup {
            node: Some((&corpus, &held, cfg.train_config()?, cfg.icl_config())),
            link: Some((
                &corpus,
                LinkTarget {
                    dataset: &held,
                    split: &split,
                },
                cfg.link_config()?,
                fcfg,
            )),
        };
        rows.extend(scaling(&setup, &cfg.scaling_fractions, seed)?);
    }
    if let Some(r) = seed_mean_spearman(&rows, |r| r.icl.map(|i| i.mean)) {
        info!("spearman(fraction, icl) = {r:.3}");
    }
    if let Some(r) = seed_mean_spearman(&rows, |r| r.test_mrr) {
        info!("spearman(fraction, mrr) = {r:.3}");
    }
    write_scaling(&ctx.out("scaling.csv"), &rows)
}
