//! Dataset ingestion and serialization.
//!
//! The canonical format is an interaction CSV with a header line and rows
//!
//! ```text
//! src_id,dst_id,timestamp,label[,feature...]
//! ```
//!
//! where `label` may be empty. Other edge lists are read through a
//! [`ColumnMapping`].

mod export;
mod synthetic;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use export::{export_embeddings, format_embedding_line};
pub use synthetic::{generate_synthetic, wedge_closure_rate, Motif, SyntheticSpec};

use crate::error::{Error, Result};
use crate::graph::{EventLog, NodeFeatures, NodeId};

/// A loaded temporal interaction dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub log: EventLog,
    pub node_features: NodeFeatures,
    /// Optional label per event, indexed by event id; a label describes the
    /// event's source node at the event time.
    pub labels: Vec<Option<i64>>,
    /// Sources and destinations are disjoint node sets.
    pub bipartite: bool,
    /// External id of each dense node id.
    pub node_ids: Vec<String>,
}

impl Dataset {
    /// Wraps a log whose node ids are their own external ids.
    pub fn from_log(name: impl Into<String>, log: EventLog, bipartite: bool) -> Self {
        let node_ids = (0..log.node_count()).map(|i| i.to_string()).collect();
        let labels = vec![None; log.len()];
        Self { name: name.into(), log, node_features: NodeFeatures::empty(), labels, bipartite, node_ids }
    }

    /// Candidate destinations for negative sampling: the destination side for
    /// bipartite data, every node otherwise.
    pub fn destination_universe(&self) -> Vec<NodeId> {
        if self.bipartite {
            let mut d: Vec<NodeId> = self.log.events().iter().map(|e| e.dst).collect();
            d.sort_unstable();
            d.dedup();
            d
        } else {
            (0..self.log.node_count()).collect()
        }
    }

    /// Number of labeled interactions with a non-zero label.
    pub fn positive_label_events(&self) -> usize {
        self.labels.iter().filter(|l| matches!(l, Some(v) if *v != 0)).count()
    }

    /// Number of distinct nodes carrying at least one non-zero label.
    pub fn positive_label_nodes(&self) -> usize {
        let mut nodes: Vec<NodeId> = self
            .log
            .events()
            .iter()
            .filter(|e| matches!(self.labels[e.id], Some(v) if v != 0))
            .map(|e| e.src)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes.len()
    }

    pub fn node_index(&self) -> HashMap<&str, NodeId> {
        self.node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Where each field lives in a delimited edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    pub src: usize,
    pub dst: usize,
    pub timestamp: usize,
    #[serde(default)]
    pub label: Option<usize>,
    /// First feature column; all later columns are features.
    #[serde(default)]
    pub features_from: Option<usize>,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl ColumnMapping {
    /// The interaction-CSV layout.
    pub fn interactions() -> Self {
        Self { delimiter: ',', has_header: true, src: 0, dst: 1, timestamp: 2, label: Some(3), features_from: Some(4) }
    }

    /// Whitespace-separated `src dst timestamp` lines without a header.
    pub fn edge_list() -> Self {
        Self { delimiter: ' ', has_header: false, src: 0, dst: 1, timestamp: 2, label: None, features_from: None }
    }
}

struct Row {
    src: String,
    dst: String,
    t: f64,
    label: Option<i64>,
    features: Vec<f64>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Splits the file into `(line number, fields)` records, header removed.
fn read_records(path: &Path, mapping: &ColumnMapping) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    if mapping.delimiter.is_whitespace() {
        let text = std::fs::read_to_string(path)?;
        for (idx, line) in text.lines().enumerate() {
            out.push((idx + 1, line.split_whitespace().map(str::to_string).collect::<Vec<_>>()));
        }
    } else {
        let delimiter = u8::try_from(mapping.delimiter).map_err(|_| Error::Config("delimiter must be a single byte".into()))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).delimiter(delimiter).from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            out.push((line, rec.iter().map(|f| f.trim().to_string()).collect()));
        }
    }
    out.retain(|(_, f)| !(f.is_empty() || f.len() == 1 && f[0].is_empty()));
    if mapping.has_header {
        if out.is_empty() {
            return Err(parse_err(path, 1, "missing header line"));
        }
        out.remove(0);
    }
    Ok(out)
}

fn read_rows(path: &Path, mapping: &ColumnMapping) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut arity: Option<usize> = None;
    let needed = mapping.src.max(mapping.dst).max(mapping.timestamp).max(mapping.label.unwrap_or(0));
    for (line_no, fields) in read_records(path, mapping)? {
        if fields.len() <= needed {
            return Err(parse_err(path, line_no, format!("expected at least {} fields, found {}", needed + 1, fields.len())));
        }
        let t: f64 = fields[mapping.timestamp]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("unparseable timestamp {:?}", fields[mapping.timestamp])))?;
        if !t.is_finite() {
            return Err(parse_err(path, line_no, "non-finite timestamp"));
        }
        let label = match mapping.label.map(|c| fields[c].as_str()) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0)
                    .map(|v| v as i64)
                    .ok_or_else(|| parse_err(path, line_no, format!("unparseable label {s:?}")))?,
            ),
        };
        let features = match mapping.features_from {
            Some(c) if c < fields.len() => fields[c..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(path, line_no, format!("unparseable feature {f:?}"))))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        match arity {
            None => arity = Some(features.len()),
            Some(a) if a != features.len() => {
                return Err(parse_err(path, line_no, format!("{} features where earlier rows have {a}", features.len())));
            }
            _ => {}
        }
        rows.push(Row { src: fields[mapping.src].to_string(), dst: fields[mapping.dst].to_string(), t, label, features });
    }
    Ok(rows)
}

/// Loads an interaction file. External ids are mapped to dense ids in order
/// of first appearance (for bipartite data: all sources, then all
/// destinations, which then carry `src:`/`dst:` prefixes in the id list).
/// Rows are stably sorted by timestamp.
pub fn load_event_csv(path: &Path, mapping: &ColumnMapping, bipartite: bool) -> Result<Dataset> {
    let rows = read_rows(path, mapping)?;
    let mut ids: HashMap<String, NodeId> = HashMap::new();
    let mut node_ids = Vec::new();
    let mut intern = |key: String| {
        *ids.entry(key.clone()).or_insert_with(|| {
            node_ids.push(key);
            node_ids.len() - 1
        })
    };
    let (src_key, dst_key): (fn(&str) -> String, fn(&str) -> String) = if bipartite {
        (|s| format!("src:{s}"), |s| format!("dst:{s}"))
    } else {
        (|s| s.to_string(), |s| s.to_string())
    };
    if bipartite {
        for r in &rows {
            intern(src_key(&r.src));
        }
    }
    let mut raw = Vec::with_capacity(rows.len());
    for r in &rows {
        let s = intern(src_key(&r.src));
        let d = intern(dst_key(&r.dst));
        raw.push((s, d, r.t));
    }
    let edge_dim = rows.first().map_or(0, |r| r.features.len());
    let features: Vec<f64> = rows.iter().flat_map(|r| r.features.iter().copied()).collect();
    let labels_in: Vec<Option<i64>> = rows.iter().map(|r| r.label).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].2.total_cmp(&raw[b].2));
    let log = EventLog::from_unsorted(node_ids.len(), edge_dim, raw, features)?;
    let labels = order.iter().map(|&i| labels_in[i]).collect();
    let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset { name, log, node_features: NodeFeatures::empty(), labels, bipartite, node_ids })
}

/// Path of the id-mapping sidecar written next to `path`.
pub fn mapping_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".ids");
    PathBuf::from(p)
}

/// Writes `dense_id,external_id` lines.
pub fn write_id_mapping(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, ext) in dataset.node_ids.iter().enumerate() {
        writeln!(w, "{i},{ext}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_id_mapping(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, ext) = line.split_once(',').ok_or_else(|| parse_err(path, i + 1, "expected two columns"))?;
        if id.parse::<usize>().ok() != Some(out.len()) {
            return Err(parse_err(path, i + 1, format!("expected dense id {}", out.len())));
        }
        out.push(ext.to_string());
    }
    Ok(out)
}

/// Writes the dataset in the interaction-CSV format; timestamps and
/// features use the shortest representation that reads back exactly.
pub fn write_event_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let log = &dataset.log;
    write!(w, "src,dst,timestamp,label")?;
    for k in 0..log.edge_dim() {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    let strip = |s: &str| -> String { s.strip_prefix("src:").or_else(|| s.strip_prefix("dst:")).unwrap_or(s).to_string() };
    for e in log.events() {
        let label = dataset.labels.get(e.id).copied().flatten().map_or_else(String::new, |l| l.to_string());
        write!(w, "{},{},{:?},{label}", strip(&dataset.node_ids[e.src]), strip(&dataset.node_ids[e.dst]), e.t)?;
        for f in log.features(e.id) {
            write!(w, ",{f:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
