//! On-disk dataset directories.
//!
//! ```text
//! features.bin    "GSPTFEAT" | u32 version=1 | u64 n | u64 d | n*d f32 (LE, row-major)
//! edges.tsv       u<TAB>v
//! labels.tsv      node<TAB>class            (optional)
//! splits.tsv      node<TAB>train|valid|test (optional)
//! class_desc.bin  same layout as features.bin with n = number of classes (optional)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{GsptError, Result};
use crate::graph::{FeatureMatrix, Graph};

pub const FEATURE_MAGIC: &[u8; 8] = b"GSPTFEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    /// Class id per node, `None` for unlabeled nodes.
    pub labels: Option<Vec<Option<u32>>>,
    pub splits: Option<Vec<Option<Split>>>,
    pub class_desc: Option<FeatureMatrix>,
}

impl Dataset {
    pub fn new(graph: Graph, features: FeatureMatrix) -> Result<Self> {
        if graph.n() != features.n() {
            return Err(GsptError::data(format!(
                "graph has {} nodes but features have {} rows",
                graph.n(),
                features.n()
            )));
        }
        Ok(Dataset {
            graph,
            features,
            labels: None,
            splits: None,
            class_desc: None,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map(|ls| ls.iter().flatten().map(|&c| c as usize + 1).max().unwrap_or(0))
            .unwrap_or(0)
    }

    pub fn label(&self, u: usize) -> Option<u32> {
        self.labels.as_ref().and_then(|ls| ls[u])
    }

    pub fn split(&self, u: usize) -> Option<Split> {
        self.splits.as_ref().and_then(|s| s[u])
    }

    /// Checks label density, split/label lengths and class-description width.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(GsptError::data("label/node count mismatch"));
            }
            let c = self.num_classes();
            let mut seen = vec![false; c];
            for &l in labels.iter().flatten() {
                seen[l as usize] = true;
            }
            if let Some(gap) = seen.iter().position(|s| !s) {
                return Err(GsptError::data(format!(
                    "label ids are not dense: class {gap} unused below max {}",
                    c - 1
                )));
            }
        }
        if let Some(splits) = &self.splits {
            if splits.len() != n {
                return Err(GsptError::data("split/node count mismatch"));
            }
        }
        if let Some(desc) = &self.class_desc {
            if desc.d() != self.d() {
                return Err(GsptError::data(format!(
                    "class_desc width {} differs from feature width {}",
                    desc.d(),
                    self.d()
                )));
            }
        }
        Ok(())
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GsptError::MissingFile(path.to_path_buf()),
        _ => GsptError::io(path, e),
    })?;
    if bytes.len() < 28 {
        return Err(GsptError::format(path, "truncated header"));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(GsptError::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(GsptError::format(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let body = &bytes[28..];
    if Some(body.len()) != n.checked_mul(d).and_then(|x| x.checked_mul(4)) {
        return Err(GsptError::format(
            path,
            format!("expected {n}x{d} f32 values, body has {} bytes", body.len()),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(n, d, data).map_err(|e| GsptError::format(path, e.to_string()))
}

pub fn write_feature_file(path: &Path, x: &FeatureMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + x.data().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(x.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(x.d() as u64).to_le_bytes());
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| GsptError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GsptError::MissingFile(path.to_path_buf()),
        _ => GsptError::io(path, e),
    })
}

/// Splits non-empty, non-comment lines into two tab/space separated fields.
pub(crate) fn two_columns<'a>(
    path: &'a Path,
    text: &'a str,
) -> impl Iterator<Item = Result<(usize, &'a str, &'a str)>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(move |(i, line)| {
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => Ok((i + 1, a, b)),
                _ => Err(GsptError::format(path, format!("line {}: expected two columns", i + 1))),
            }
        })
}

fn parse_id(path: &Path, line: usize, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| GsptError::format(path, format!("line {line}: bad integer {s:?}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features = read_feature_file(&dir.join("features.bin"))?;
    let n = features.n();

    let edge_path = dir.join("edges.tsv");
    let text = read_text(&edge_path)?;
    let mut edges = Vec::new();
    for row in two_columns(&edge_path, &text) {
        let (line, a, b) = row?;
        let u = parse_id(&edge_path, line, a)?;
        let v = parse_id(&edge_path, line, b)?;
        if u >= n || v >= n {
            return Err(GsptError::data(format!(
                "{}: line {line}: node id >= n = {n}",
                edge_path.display()
            )));
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(n, edges)?;
    let mut ds = Dataset::new(graph, features)?;

    let label_path = dir.join("labels.tsv");
    if label_path.exists() {
        let text = read_text(&label_path)?;
        let rows: Vec<_> = two_columns(&label_path, &text).collect::<Result<_>>()?;
        if rows.len() > n {
            return Err(GsptError::data(format!(
                "label/node count mismatch: {} labels for {n} nodes",
                rows.len()
            )));
        }
        let mut labels = vec![None; n];
        for (line, a, b) in rows {
            let u = parse_id(&label_path, line, a)?;
            let c = parse_id(&label_path, line, b)?;
            if u >= n {
                return Err(GsptError::data(format!(
                    "label/node count mismatch: node {u} >= n = {n}"
                )));
            }
            if labels[u].replace(c as u32).is_some() {
                return Err(GsptError::data(format!("node {u} labeled twice")));
            }
        }
        ds.labels = Some(labels);
    }

    let split_path = dir.join("splits.tsv");
    if split_path.exists() {
        let text = read_text(&split_path)?;
        let mut splits = vec![None; n];
        for row in two_columns(&split_path, &text) {
            let (line, a, b) = row?;
            let u = parse_id(&split_path, line, a)?;
            if u >= n {
                return Err(GsptError::data(format!("split node {u} >= n = {n}")));
            }
            let s = Split::parse(b)
                .ok_or_else(|| GsptError::format(&split_path, format!("line {line}: unknown split {b:?}")))?;
            if splits[u].replace(s).is_some() {
                return Err(GsptError::data(format!("node {u} appears in two splits")));
            }
        }
        ds.splits = Some(splits);
    }

    let desc_path = dir.join("class_desc.bin");
    if desc_path.exists() {
        ds.class_desc = Some(read_feature_file(&desc_path)?);
    }
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GsptError::io(dir, e))?;
    write_feature_file(&dir.join("features.bin"), &ds.features)?;

    let write_lines = |name: &str, lines: &mut dyn Iterator<Item = String>| -> Result<()> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| GsptError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for l in lines {
            writeln!(w, "{l}").map_err(|e| GsptError::io(&path, e))?;
        }
        w.flush().map_err(|e| GsptError::io(&path, e))
    };

    write_lines("edges.tsv", &mut ds.graph.edges().map(|(u, v)| format!("{u}\t{v}")))?;
    if let Some(labels) = &ds.labels {
        write_lines(
            "labels.tsv",
            &mut labels
                .iter()
                .enumerate()
                .filter_map(|(u, l)| l.map(|c| format!("{u}\t{c}"))),
        )?;
    }
    if let Some(splits) = &ds.splits {
        write_lines(
            "splits.tsv",
            &mut splits
                .iter()
                .enumerate()
                .filter_map(|(u, s)| s.map(|s| format!("{u}\t{}", s.as_str()))),
        )?;
    }
    if let Some(desc) = &ds.class_desc {
        write_feature_file(&dir.join("class_desc.bin"), desc)?;
    }
    Ok(())
}
