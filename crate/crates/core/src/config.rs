//! Flat TOML run configuration. Node-track keys are bare hyperparameter names;
//! link-track keys carry a `link_` prefix, and fine-tuning, in-context and
//! synthetic-data keys carry `finetune_`, `icl_` and `synth_`. Unknown keys
//! are rejected with the nearest valid name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};
use crate::icl::IclConfig;
use crate::linkpred::{FinetuneConfig, LinkConfig};
use crate::nn::DropoutConfig;
use crate::pretrain::TrainConfig;
use crate::sequence::{MaskingConfig, NegativeMode};
use crate::synth::SynthSpec;
use crate::walk::WalkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub mask_rate: f64,
    pub p_random: f64,
    pub p_unchanged: f64,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_updates: u64,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub emb_dropout: f64,
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub batch_size: usize,
    /// `none`, `random` or `distractor`.
    pub negatives: String,
    pub partition_size: usize,

    pub link_mask_rate: f64,
    pub link_p_random: f64,
    pub link_p_unchanged: f64,
    pub link_hidden_dim: usize,
    pub link_ffn_dim: usize,
    pub link_n_layers: usize,
    pub link_n_heads: usize,
    pub link_epochs: usize,
    pub link_weight_decay: f64,
    pub link_peak_lr: f64,
    pub link_end_lr: f64,
    pub link_warmup_updates: u64,
    pub link_dropout: f64,
    pub link_attention_dropout: f64,
    pub link_emb_dropout: f64,
    pub n_hops: usize,

    pub finetune_lr: f64,
    pub finetune_projector_layers: usize,
    pub finetune_projector_dim: usize,
    pub finetune_epochs: usize,
    pub finetune_patience: usize,
    pub finetune_batch_size: usize,
    pub finetune_eval_negatives: usize,

    pub icl_n_way: usize,
    pub icl_k_shot: usize,
    pub icl_templates: usize,
    pub icl_repeats: usize,
    pub icl_prototype_hops: usize,

    pub synth_n: usize,
    pub synth_classes: usize,
    pub synth_d: usize,
    pub synth_p_in: f64,
    pub synth_p_out: f64,
    pub synth_sigma: f64,
    pub synth_separation: f64,
    pub synth_train_frac: f64,
    pub synth_valid_frac: f64,
    pub synth_family_seed: u64,
    /// Graphs drawn per corpus by the experiment commands.
    pub synth_graphs: usize,

    pub scaling_fractions: Vec<f64>,
    /// Seeds of the scaling and ablation reports; empty means the run seed.
    pub report_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LinkConfig::default();
        let f = FinetuneConfig::default();
        let i = IclConfig::default();
        let s = SynthSpec::default();
        RunConfig {
            seed: 0,
            mask_rate: t.masking.mask_rate,
            p_random: t.masking.p_random,
            p_unchanged: t.masking.p_unchanged,
            hidden_dim: t.hidden_dim,
            ffn_dim: t.ffn_dim,
            n_layers: t.n_layers,
            n_heads: t.n_heads,
            epochs: t.epochs,
            weight_decay: t.weight_decay,
            peak_lr: t.peak_lr,
            end_lr: t.end_lr,
            warmup_updates: t.warmup_updates,
            dropout: t.dropout.dropout,
            attention_dropout: t.dropout.attention_dropout,
            emb_dropout: t.dropout.emb_dropout,
            p: t.walk.p,
            q: t.walk.q,
            walk_length: t.walk.walk_length,
            batch_size: t.batch_size,
            negatives: "distractor".into(),
            partition_size: 1000,
            link_mask_rate: l.masking.mask_rate,
            link_p_random: l.masking.p_random,
            link_p_unchanged: l.masking.p_unchanged,
            link_hidden_dim: l.hidden_dim,
            link_ffn_dim: l.ffn_dim,
            link_n_layers: l.n_layers,
            link_n_heads: l.n_heads,
            link_epochs: l.epochs,
            link_weight_decay: l.weight_decay,
            link_peak_lr: l.peak_lr,
            link_end_lr: l.end_lr,
            link_warmup_updates: l.warmup_updates,
            link_dropout: l.dropout.dropout,
            link_attention_dropout: l.dropout.attention_dropout,
            link_emb_dropout: l.dropout.emb_dropout,
            n_hops: l.n_hops,
            finetune_lr: f.lr,
            finetune_projector_layers: f.projector_layers,
            finetune_projector_dim: f.projector_dim,
            finetune_epochs: f.epochs,
            finetune_patience: f.patience,
            finetune_batch_size: f.batch_size,
            finetune_eval_negatives: f.eval_negatives,
            icl_n_way: i.n_way,
            icl_k_shot: i.k_shot,
            icl_templates: i.templates,
            icl_repeats: i.repeats,
            icl_prototype_hops: 2,
            synth_n: s.n,
            synth_classes: s.classes,
            synth_d: s.d,
            synth_p_in: s.p_in,
            synth_p_out: s.p_out,
            synth_sigma: s.sigma,
            synth_separation: s.separation,
            synth_train_frac: s.train_frac,
            synth_valid_frac: s.valid_frac,
            synth_family_seed: s.family_seed,
            synth_graphs: 8,
            scaling_fractions: vec![0.25, 0.5, 1.0],
            report_seeds: Vec::new(),
        }
    }
}

/// Every accepted key, in declaration order.
pub fn known_keys() -> Vec<String> {
    match toml::Table::try_from(RunConfig::default()) {
        Ok(t) => t.keys().cloned().collect(),
        Err(_) => Vec::new(),
    }
}

fn nearest_key(key: &str) -> Option<String> {
    known_keys()
        .into_iter()
        .map(|k| (strsim::levenshtein(key, &k), k))
        .min_by_key(|(d, _)| *d)
        .map(|(_, k)| k)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| GsptError::config(format!("invalid TOML: {}", e.message())))?;
        let known = known_keys();
        for key in table.keys() {
            if !known.iter().any(|k| k == key) {
                let hint = nearest_key(key).map_or(String::new(), |k| format!(" (did you mean `{k}`?)"));
                return Err(GsptError::config(format!("unknown key `{key}`{hint}")));
            }
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| GsptError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GsptError::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| GsptError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?.validate()?;
        self.link_config()?.validate()?;
        self.finetune_config().validate()?;
        self.synth_spec().validate()?;
        if self.partition_size == 0 {
            return Err(GsptError::config("partition_size must be >= 1"));
        }
        if self.icl_n_way < 2 || self.icl_k_shot == 0 || self.icl_templates == 0 || self.icl_repeats == 0 {
            return Err(GsptError::config(
                "need icl_n_way >= 2 and positive icl_k_shot, icl_templates, icl_repeats",
            ));
        }
        if self.synth_graphs == 0 {
            return Err(GsptError::config("synth_graphs must be >= 1"));
        }
        if self.scaling_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(GsptError::config("scaling_fractions must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn negative_mode(&self) -> Result<NegativeMode> {
        NegativeMode::parse(&self.negatives).ok_or_else(|| {
            GsptError::config(format!(
                "negatives = {:?}; expected one of none, random, distractor",
                self.negatives
            ))
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            peak_lr: self.peak_lr,
            end_lr: self.end_lr,
            warmup_updates: self.warmup_updates,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            hidden_dim: self.hidden_dim,
            ffn_dim: self.ffn_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            dropout: DropoutConfig {
                dropout: self.dropout,
                attention_dropout: self.attention_dropout,
                emb_dropout: self.emb_dropout,
            },
            walk: self.walk_config(),
            masking: MaskingConfig {
                mask_rate: self.mask_rate,
                p_random: self.p_random,
                p_unchanged: self.p_unchanged,
            },
            negatives: self.negative_mode()?,
            seed: self.seed,
        })
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            walk_length: self.walk_length,
            p: self.p,
            q: self.q,
        }
    }

    pub fn link_config(&self) -> Result<LinkConfig> {
        Ok(LinkConfig {
            epochs: self.link_epochs,
            peak_lr: self.link_peak_lr,
            end_lr: self.link_end_lr,
            warmup_updates: self.link_warmup_updates,
            weight_decay: self.link_weight_decay,
            hidden_dim: self.link_hidden_dim,
            ffn_dim: self.link_ffn_dim,
            n_layers: self.link_n_layers,
            n_heads: self.link_n_heads,
            dropout: DropoutConfig {
                dropout: self.link_dropout,
                attention_dropout: self.link_attention_dropout,
                emb_dropout: self.link_emb_dropout,
            },
            masking: MaskingConfig {
                mask_rate: self.link_mask_rate,
                p_random: self.link_p_random,
                p_unchanged: self.link_p_unchanged,
            },
            n_hops: self.n_hops,
            seed: self.seed,
        })
    }

    /// Fine-tuning reuses the link-track dropout rates.
    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.finetune_lr,
            epochs: self.finetune_epochs,
            patience: self.finetune_patience,
            batch_size: self.finetune_batch_size,
            projector_layers: self.finetune_projector_layers,
            projector_dim: self.finetune_projector_dim,
            dropout: DropoutConfig {
                dropout: self.link_dropout,
                attention_dropout: self.link_attention_dropout,
                emb_dropout: self.link_emb_dropout,
            },
            eval_negatives: self.finetune_eval_negatives,
            seed: self.seed,
        }
    }

    pub fn icl_config(&self) -> IclConfig {
        IclConfig {
            n_way: self.icl_n_way,
            k_shot: self.icl_k_shot,
            templates: self.icl_templates,
            repeats: self.icl_repeats,
            walk: self.walk_config(),
            seed: self.seed,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n: self.synth_n,
            classes: self.synth_classes,
            d: self.synth_d,
            p_in: self.synth_p_in,
            p_out: self.synth_p_out,
            sigma: self.synth_sigma,
            separation: self.synth_separation,
            train_frac: self.synth_train_frac,
            valid_frac: self.synth_valid_frac,
            family_seed: self.synth_family_seed,
        }
    }

    /// `report_seeds`, or the run seed alone when empty.
    pub fn seeds(&self) -> Vec<u64> {
        if self.report_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.report_seeds.clone()
        }
    }
}
