//! Link-prediction track: Hop2Token contexts, masked reconstruction through a
//! graph-convolution decoder, MLP edge scoring and MRR evaluation.

pub mod hop;
pub mod model;
pub mod mrr;
pub mod scorer;
pub mod split;
pub mod train;

pub use hop::{hop2token, HopSequence, HopTokens};
pub use mrr::{evaluate_mrr, mrr_from_scores};
pub use scorer::EdgeScorer;
pub use split::{read_split, split_edges, write_negatives, write_split, EdgeSplit, Phase};
pub use train::{
    evaluate_link_model, finetune, fresh_link_params, link_pretrain, write_link_results, FinetuneConfig,
    FinetuneResult, LinkConfig, LinkGraph, LinkResult,
};
