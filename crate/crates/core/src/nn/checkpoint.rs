//! Checkpoint files.
//!
//! ```text
//! "GSPTCKPT" | u32 version | u64 metadata length | metadata (UTF-8 JSON) | f32 LE tensors
//! ```
//!
//! Tensors follow the declaration order of the metadata tensor table. The
//! metadata never contains timestamps, so identical runs give identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Layout, ModelParams, ModelShape};
use crate::error::{GsptError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSPTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Node,
    Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub shape: ModelShape,
    pub step: u64,
    /// Layer widths of an attached edge scorer (`[d, hidden.., 1]`), if any.
    pub scorer_dims: Option<Vec<usize>>,
    pub tensors: Vec<TensorEntry>,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
    /// Flat scorer parameters; present iff `meta.scorer_dims` is.
    pub scorer: Option<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, params: ModelParams<f32>, step: u64, config: serde_json::Value) -> Self {
        let meta = CheckpointMeta {
            kind,
            shape: params.layout.shape,
            step,
            scorer_dims: None,
            tensors: entries(&params.layout),
            config,
        };
        Checkpoint {
            meta,
            params,
            scorer: None,
        }
    }

    pub fn with_scorer(mut self, dims: Vec<usize>, data: Vec<f32>) -> Self {
        self.meta.scorer_dims = Some(dims);
        self.scorer = Some(data);
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| GsptError::data(format!("cannot encode checkpoint metadata: {e}")))?;
        let scorer_len = self.scorer.as_ref().map_or(0, |s| s.len());
        let mut buf = Vec::with_capacity(20 + meta.len() + 4 * (self.params.data.len() + scorer_len));
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        for v in self.params.data.iter().chain(self.scorer.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| GsptError::format(origin, msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[20..meta_end]).map_err(|e| bad(&format!("bad metadata: {e}")))?;
        let layout = match meta.kind {
            ModelKind::Node => Layout::node(meta.shape)?,
            ModelKind::Link => Layout::link(meta.shape)?,
        };
        if entries(&layout) != meta.tensors {
            return Err(bad("tensor table does not match the declared architecture"));
        }
        let body = &bytes[meta_end..];
        if body.len() % 4 != 0 {
            return Err(bad("tensor payload is not a whole number of f32 values"));
        }
        let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let data: Vec<f32> = values.by_ref().take(layout.len).collect();
        if data.len() != layout.len {
            return Err(bad("truncated tensor payload"));
        }
        let rest: Vec<f32> = values.collect();
        let scorer = match &meta.scorer_dims {
            Some(dims) => {
                let want: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
                if rest.len() != want {
                    return Err(bad("scorer payload length mismatch"));
                }
                Some(rest)
            }
            None if rest.is_empty() => None,
            None => return Err(bad("trailing bytes after tensors")),
        };
        let params = ModelParams { layout, data };
        params.check_finite()?;
        Ok(Checkpoint { meta, params, scorer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| GsptError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => GsptError::MissingFile(path.to_path_buf()),
            _ => GsptError::io(path, e),
        })?;
        Self::from_bytes(&bytes, path)
    }
}

fn entries(layout: &Layout) -> Vec<TensorEntry> {
    layout
        .tensors
        .iter()
        .map(|t| TensorEntry {
            name: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
        })
        .collect()
}
