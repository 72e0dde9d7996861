//! Run configuration files: TOML with fixed sections, unknown keys
//! rejected, and `key=value` overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ColumnMapping, Motif, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{parse_mask_fraction, ExperimentSpec, MaskSpec, Task};
use crate::nef::{NefConfig, WalkAggregator, WalkEncoderKind};
use crate::tgn::{Aggregation, MemoryInit, ModelConfig};
use crate::train::TrainConfig;
use crate::walk::WalkConfig;

/// Environment variable naming the directory relative dataset paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "NEF_TGN_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// `src,dst,timestamp,label,features...` with a header line.
    Interactions,
    /// Delimited edge list described by `[data.columns]`.
    EdgeList,
    /// Generated from `[data.synthetic]`.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub nodes: usize,
    pub events: usize,
    pub motif: Motif,
    pub strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { nodes: 200, events: 4000, motif: Motif::Triadic, strength: 0.8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub path: Option<PathBuf>,
    pub bipartite: bool,
    pub columns: Option<ColumnMapping>,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { kind: DataKind::Synthetic, path: None, bipartite: false, columns: None, synthetic: SyntheticSection::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    /// `K`
    pub walks_per_node: usize,
    /// `M`
    pub length: usize,
    /// Recency decay per unit time.
    pub alpha: f64,
}

impl Default for WalkSection {
    fn default() -> Self {
        let w = WalkConfig::default();
        Self { walks_per_node: w.walks_per_node, length: w.length, alpha: w.alpha }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub mem_dim: usize,
    pub emb_dim: usize,
    pub time_dim: usize,
    pub neighbors: usize,
    pub hops: usize,
    pub msg_nef: bool,
    pub emb_nef: bool,
    /// Recurrent walk encoder; `false` selects the masked mean.
    pub rnn: bool,
    pub walk_attention: bool,
    pub pos_dim: usize,
    pub nef_time_dim: usize,
    pub rnn_hidden: usize,
    /// `"mean"` or `"last"`.
    pub aggregation: String,
    /// `"gaussian"` or `"zeros"`.
    pub memory_init: String,
    pub dropout: f64,
    pub walk: WalkSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            mem_dim: m.mem_dim,
            emb_dim: m.emb_dim,
            time_dim: m.time_dim,
            neighbors: m.neighbors,
            hops: m.hops,
            msg_nef: m.use_msg_nef,
            emb_nef: m.use_emb_nef,
            rnn: m.nef.encoder == WalkEncoderKind::BiRecurrent,
            walk_attention: m.nef.aggregator == WalkAggregator::SelfAttention,
            pos_dim: m.nef.pos_dim,
            nef_time_dim: m.nef.time_dim,
            rnn_hidden: m.nef.rnn_hidden,
            aggregation: "mean".into(),
            memory_init: "gaussian".into(),
            dropout: m.dropout,
            walk: WalkSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub task: Task,
    /// `"lean"`, `"strict"`, `"75%"` or a fraction.
    pub node_mask: String,
    pub edge_mask: String,
    pub mask_seed: u64,
    pub split: [f64; 3],
    pub n_runs: usize,
    pub both_unseen: bool,
    pub node_epochs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = ExperimentSpec::default();
        Self {
            task: e.task,
            node_mask: "0".into(),
            edge_mask: "0".into(),
            mask_seed: 0,
            split: e.split,
            n_runs: e.n_runs,
            both_unseen: false,
            node_epochs: e.node_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { batch_size: t.batch_size, epochs: t.epochs, lr: t.lr, patience: t.patience }
    }
}

/// Everything one command needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

fn parse_override(kv: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{p} is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (later ones win) and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for kv in overrides {
            let (path, value) = parse_override(kv)?;
            set_path(&mut table, &path, value)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.kind != DataKind::Synthetic && self.data.path.is_none() {
            return Err(Error::Config("data.path is required unless data.kind = \"synthetic\"".into()));
        }
        if self.data.kind == DataKind::EdgeList && self.data.columns.is_none() {
            return Err(Error::Config("data.kind = \"edge-list\" needs a [data.columns] section".into()));
        }
        self.experiment()?.validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let aggregation = match m.aggregation.as_str() {
            "mean" => Aggregation::Mean,
            "last" => Aggregation::Last,
            other => return Err(Error::Config(format!("model.aggregation {other:?} (mean, last)"))),
        };
        let memory_init = match m.memory_init.as_str() {
            "gaussian" => MemoryInit::Gaussian,
            "zeros" => MemoryInit::Zeros,
            other => return Err(Error::Config(format!("model.memory_init {other:?} (gaussian, zeros)"))),
        };
        Ok(ModelConfig {
            mem_dim: m.mem_dim,
            emb_dim: m.emb_dim,
            time_dim: m.time_dim,
            neighbors: m.neighbors,
            hops: m.hops,
            use_msg_nef: m.msg_nef,
            use_emb_nef: m.emb_nef,
            nef: NefConfig {
                walk: WalkConfig { walks_per_node: m.walk.walks_per_node, length: m.walk.length, alpha: m.walk.alpha, seed: self.seed },
                pos_dim: m.pos_dim,
                time_dim: m.nef_time_dim,
                rnn_hidden: m.rnn_hidden,
                encoder: if m.rnn { WalkEncoderKind::BiRecurrent } else { WalkEncoderKind::Mean },
                aggregator: if m.walk_attention { WalkAggregator::SelfAttention } else { WalkAggregator::Identity },
            },
            aggregation,
            memory_init,
            dropout: m.dropout,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig { batch_size: t.batch_size, epochs: t.epochs, lr: t.lr, patience: t.patience, seed: self.seed }
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let e = &self.eval;
        Ok(ExperimentSpec {
            task: e.task,
            mask: MaskSpec { node_frac: parse_mask_fraction(&e.node_mask)?, edge_frac: parse_mask_fraction(&e.edge_mask)?, seed: e.mask_seed },
            split: e.split,
            n_runs: e.n_runs,
            both_unseen: e.both_unseen,
            frozen: false,
            node_epochs: e.node_epochs,
            model: self.model_config()?,
            train: self.train_config(),
        })
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.data.synthetic;
        SyntheticSpec { nodes: s.nodes, events: s.events, motif: s.motif, strength: s.strength, seed: s.seed }
    }

    /// Dataset path, with relative paths resolved against `data_dir`.
    pub fn data_path(&self, data_dir: Option<&Path>) -> Option<PathBuf> {
        let p = self.data.path.as_ref()?;
        Some(match data_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.clone(),
        })
    }

    pub fn column_mapping(&self) -> ColumnMapping {
        match self.data.kind {
            DataKind::EdgeList => self.data.columns.clone().unwrap_or_else(ColumnMapping::edge_list),
            _ => self.data.columns.clone().unwrap_or_else(ColumnMapping::interactions),
        }
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
