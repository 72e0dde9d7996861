//! Multi-seed experiments over the four evaluation tasks.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_roc, average_precision, mean_std};
use super::split::{active_nodes, apply_edge_mask, apply_node_mask, chrono_split, MaskSpec};
use crate::data::Dataset;
use crate::decoder::NodeDecoder;
use crate::error::{Error, Result};
use crate::graph::{Event, EventLog, NodeId, TemporalGraph};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::tgn::{nef_key, role, EmbeddingQuery, ModelConfig, TgnModel};
use crate::train::{derive_seed, evaluate, metrics_from_scores, stream_scores, train, Stage, TrainConfig, TrainData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    TransductiveEdge,
    InductiveEdge,
    TransductiveNode,
    InductiveNode,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::TransductiveEdge => "transductive-edge",
            Task::InductiveEdge => "inductive-edge",
            Task::TransductiveNode => "transductive-node",
            Task::InductiveNode => "inductive-node",
        }
    }

    pub fn is_inductive(self) -> bool {
        matches!(self, Task::InductiveEdge | Task::InductiveNode)
    }

    pub fn is_node(self) -> bool {
        matches!(self, Task::TransductiveNode | Task::InductiveNode)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Task::TransductiveEdge, Task::InductiveEdge, Task::TransductiveNode, Task::InductiveNode]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub task: Task,
    pub mask: MaskSpec,
    pub split: [f64; 3],
    pub n_runs: usize,
    /// Inductive scoring requires both endpoints unseen instead of one.
    pub both_unseen: bool,
    /// Skip training and score the freshly initialized model.
    pub frozen: bool,
    /// Epochs for the node classifier in the node tasks.
    pub node_epochs: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            task: Task::TransductiveEdge,
            mask: MaskSpec::none(),
            split: [0.8, 0.1, 0.1],
            n_runs: 10,
            both_unseen: false,
            frozen: false,
            node_epochs: 50,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be in [0,1] and sum to 1", self.split)));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be >= 1".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Seed of run `r`; every run uses it for weights, sampling and masks.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.train.seed, 1_000 + r as u64)
    }
}

/// Masked and split data for one run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: TrainData,
    /// Nodes that appear in the kept training events.
    pub seen: BTreeSet<NodeId>,
    pub masked: BTreeSet<NodeId>,
}

fn scored_event(e: &Event, seen: &BTreeSet<NodeId>, inductive: bool, both_unseen: bool) -> bool {
    let unseen = [e.src, e.dst].iter().filter(|n| !seen.contains(n)).count();
    match (inductive, both_unseen) {
        (false, _) => unseen == 0,
        (true, false) => unseen >= 1,
        (true, true) => unseen == 2,
    }
}

/// Splits chronologically, masks the training part, and marks which test
/// events the task scores.
pub fn prepare(dataset: &Dataset, spec: &ExperimentSpec, seed: u64) -> Result<Prepared> {
    let split = chrono_split(&dataset.log, spec.split)?;
    let mask_seed = derive_seed(spec.mask.seed, seed);
    let universe_nodes = active_nodes(&dataset.log);
    let (kept, masked) = apply_node_mask(&split.train, &universe_nodes, spec.mask.node_frac, mask_seed)?;
    let kept = apply_edge_mask(&kept, spec.mask.edge_frac, derive_seed(mask_seed, 1))?;
    let drop_masked = |log: &EventLog| -> EventLog {
        if spec.task.is_inductive() {
            log.clone()
        } else {
            log.filter(|e| !masked.contains(&e.src) && !masked.contains(&e.dst))
        }
    };
    let (val, test) = (drop_masked(&split.val), drop_masked(&split.test));
    let seen = active_nodes(&kept);
    let inductive = spec.task.is_inductive();
    let scored: Vec<bool> = test.events().iter().map(|e| scored_event(e, &seen, inductive, spec.both_unseen)).collect();
    let mut universe = dataset.destination_universe();
    if !inductive {
        universe.retain(|n| !masked.contains(n));
    }
    // Node masking hides events from training only: for inductive tasks the
    // masked nodes' training-period history is replayed (memory and graph)
    // before scoring, but never produces a loss or a gradient.
    let context = if inductive {
        let kept_ids: BTreeSet<usize> = kept.events().iter().map(|e| e.id).collect();
        Some(split.train.filter(|e| kept_ids.contains(&e.id) || masked.contains(&e.src) || masked.contains(&e.dst)))
    } else {
        None
    };
    let mut data = TrainData::new(&kept, context.as_ref(), &val, &test, &dataset.node_features, universe, scored, spec.train.batch_size, seed)?;
    // A masked node must not surface during training, not even as a
    // negative; otherwise "never updated" becomes a learnable negative cue.
    data.train_universe.retain(|n| !masked.contains(n));
    Ok(Prepared { data, seen, masked })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub run: usize,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
    pub best_epoch: Option<usize>,
    pub best_val_ap: Option<f64>,
    /// Scored test items (edges or labels).
    pub scored: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub task: Task,
    pub label: String,
    pub config_hash: String,
    pub runs: Vec<SeedResult>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub ap_mean: f64,
    pub ap_std: f64,
}

impl RunReport {
    pub fn from_runs(dataset: &str, task: Task, label: &str, config_hash: &str, runs: Vec<SeedResult>) -> Self {
        let aucs: Vec<f64> = runs.iter().map(|r| r.auc).collect();
        let aps: Vec<f64> = runs.iter().map(|r| r.ap).collect();
        let (auc_mean, auc_std) = mean_std(&aucs);
        let (ap_mean, ap_std) = mean_std(&aps);
        Self {
            dataset: dataset.to_string(),
            task,
            label: label.to_string(),
            config_hash: config_hash.to_string(),
            runs,
            auc_mean,
            auc_std,
            ap_mean,
            ap_std,
        }
    }

    /// One JSON line per seed followed by a summary line.
    /// One `seed` record per run plus a `summary` record. Wall-clock times
    /// are left out so repeated runs produce identical files; see
    /// [`RunReport::write_timings`].
    pub fn write_jsonl(&self, w: &mut dyn Write) -> Result<()> {
        for r in &self.runs {
            let mut v = serde_json::to_value(r)?;
            if let Some(o) = v.as_object_mut() {
                o.remove("seconds");
            }
            v["record"] = "seed".into();
            v["label"] = self.label.clone().into();
            v["config_hash"] = self.config_hash.clone().into();
            writeln!(w, "{}", serde_json::to_string(&v)?)?;
        }
        let summary = serde_json::json!({
            "record": "summary",
            "dataset": self.dataset,
            "task": self.task,
            "label": self.label,
            "config_hash": self.config_hash,
            "n_runs": self.runs.len(),
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "ap_mean": self.ap_mean,
            "ap_std": self.ap_std,
        });
        writeln!(w, "{}", serde_json::to_string(&summary)?)?;
        Ok(())
    }

    pub fn write_timings(&self, w: &mut dyn Write) -> Result<()> {
        for r in &self.runs {
            let v = serde_json::json!({ "label": self.label, "config_hash": self.config_hash, "run": r.run, "seed": r.seed, "seconds": r.seconds });
            writeln!(w, "{}", serde_json::to_string(&v)?)?;
        }
        Ok(())
    }
}

/// Rows of `label  AUC mean ± std  AP mean ± std`, padded to align.
pub fn format_table(reports: &[RunReport]) -> String {
    let width = reports.iter().map(|r| r.label.len()).chain(["Model".len()]).max().unwrap_or(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>15}  {:>15}", "Model", "AUC-ROC", "AP");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<width$}  {:>15}  {:>15}",
            r.label,
            format!("{:.3} ± {:.3}", r.auc_mean, r.auc_std),
            format!("{:.3} ± {:.3}", r.ap_mean, r.ap_std)
        );
    }
    s
}

/// Source-node embeddings at every labeled event, computed by streaming all
/// events in order; `(event index, embedding row)` pairs.
fn label_embeddings(model: &TgnModel, store: &ParamStore, graph: &TemporalGraph, labels: &[Option<i64>], batch_size: usize) -> Result<(Vec<usize>, Tensor)> {
    let mut state = model.init_state(graph.node_count());
    let events = graph.log().events();
    let mut idx = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, batch) in events.chunks(batch_size.max(1)).enumerate() {
        let picked: Vec<usize> = (0..batch.len()).filter(|&i| labels[batch[i].id].is_some()).collect();
        let mut tape = Tape::new();
        let mut flush = None;
        if !picked.is_empty() {
            let q: Vec<EmbeddingQuery> =
                picked.iter().map(|&i| EmbeddingQuery { node: batch[i].src, t: batch[i].t, key: nef_key(batch[i].id, role::PROBE, 0) }).collect();
            let out = model.embed(&mut tape, store, &mut state, graph, &q)?;
            let z = tape.value(out.z);
            for (r, &i) in picked.iter().enumerate() {
                idx.push(k * batch_size.max(1) + i);
                rows.push(z.row_slice(r).to_vec());
            }
            flush = out.flush;
        }
        model.finish_batch(store, &mut state, graph, &tape, flush, batch)?;
    }
    let z = if rows.is_empty() { Tensor::zeros(0, model.config.emb_dim) } else { Tensor::from_rows(&rows)? };
    Ok((idx, z))
}

/// Trains a node classifier on frozen embeddings of training-split labels
/// and scores test-split labels. Labels are binarized as `label != 0`.
fn node_task(model: &TgnModel, store: &ParamStore, dataset: &Dataset, prep: &Prepared, spec: &ExperimentSpec, seed: u64) -> Result<(f64, f64, usize)> {
    let graph = &prep.data.eval_graph;
    let (idx, z) = label_embeddings(model, store, graph, &dataset.labels, spec.train.batch_size)?;
    let events = graph.log().events();
    let n_train = events.len() - prep.data.test.len();
    let label = |i: usize| -> bool { dataset.labels[events[i].id].map_or(false, |v| v != 0) };
    let train_rows: Vec<usize> = (0..idx.len()).filter(|&r| idx[r] < n_train).collect();
    let test_rows: Vec<usize> = (0..idx.len())
        .filter(|&r| idx[r] >= n_train && prep.data.test_scored[idx[r] - n_train])
        .filter(|&r| {
            let seen = prep.seen.contains(&events[idx[r]].src);
            seen != spec.task.is_inductive()
        })
        .collect();
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::InvalidArgument("node task needs labeled events in both the training and test splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7));
    let mut cstore = ParamStore::new();
    let decoder = NodeDecoder::new(&mut cstore, "node", model.config.emb_dim, 2, &mut rng)?;
    let mut adam = Adam::new(AdamConfig { lr: spec.train.lr.max(1e-3), ..AdamConfig::default() });
    let zc = Tensor::from_rows(&train_rows.iter().map(|&r| z.row_slice(r).to_vec()).collect::<Vec<_>>())?;
    let targets: Vec<usize> = train_rows.iter().map(|&r| label(idx[r]) as usize).collect();
    for _ in 0..spec.node_epochs {
        let mut tape = Tape::new();
        let x = tape.constant(zc.clone());
        let logits = decoder.logits(&mut tape, &cstore, x, None)?;
        let loss = tape.cross_entropy(logits, targets.clone())?;
        let grads = tape.backward(loss)?;
        cstore.zero_grad();
        grads.accumulate_into(&mut cstore);
        adam.step(&mut cstore);
    }
    let zt = Tensor::from_rows(&test_rows.iter().map(|&r| z.row_slice(r).to_vec()).collect::<Vec<_>>())?;
    let probs = decoder.class_probs(&cstore, &zt)?;
    let scores: Vec<f64> = (0..zt.rows()).map(|r| probs.get(r, 1)).collect();
    let labels: Vec<bool> = test_rows.iter().map(|&r| label(idx[r])).collect();
    Ok((auc_roc(&scores, &labels)?, average_precision(&scores, &labels)?, scores.len()))
}

/// One full train and test cycle.
pub fn run_single(dataset: &Dataset, spec: &ExperimentSpec, run: usize, config_hash: &str) -> Result<SeedResult> {
    let start = Instant::now();
    let seed = spec.run_seed(run);
    let prep = prepare(dataset, spec, seed)?;
    let mcfg = ModelConfig { seed, ..spec.model.clone() };
    let (model, mut store) = TgnModel::new(mcfg, dataset.node_features.dim(), dataset.log.edge_dim())?;
    let (best_epoch, best_val_ap) = if spec.frozen {
        (None, None)
    } else {
        let tcfg = TrainConfig { seed, ..spec.train.clone() };
        let out = train(&model, &mut store, &prep.data, &tcfg, config_hash, None)?;
        (Some(out.best_epoch), out.best_val_ap)
    };
    let (auc, ap, scored) = if spec.task.is_node() {
        node_task(&model, &store, dataset, &prep, spec, seed)?
    } else {
        let m = evaluate(&model, &store, &prep.data, Stage::Test)?;
        (m.auc, m.ap, m.positives)
    };
    Ok(SeedResult { run, seed, auc, ap, best_epoch, best_val_ap, scored, seconds: start.elapsed().as_secs_f64() })
}

/// Runs `spec.n_runs` seeds, `parallel` at a time. Results do not depend
/// on `parallel`.
pub fn run_experiment(dataset: &Dataset, spec: &ExperimentSpec, label: &str, config_hash: &str, parallel: usize) -> Result<RunReport> {
    spec.validate()?;
    let parallel = parallel.max(1);
    let mut results: Vec<Option<Result<SeedResult>>> = (0..spec.n_runs).map(|_| None).collect();
    for chunk in (0..spec.n_runs).collect::<Vec<_>>().chunks(parallel) {
        if chunk.len() == 1 {
            results[chunk[0]] = Some(run_single(dataset, spec, chunk[0], config_hash));
            continue;
        }
        let outs: Vec<(usize, Result<SeedResult>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&r| (r, s.spawn(move || run_single(dataset, spec, r, config_hash)))).collect();
            handles
                .into_iter()
                .map(|(r, h)| (r, h.join().unwrap_or_else(|_| Err(Error::Diverged(format!("run {r} panicked"))))))
                .collect()
        });
        for (r, out) in outs {
            results[r] = Some(out);
        }
    }
    let runs = results.into_iter().map(|r| r.expect("every run executed")).collect::<Result<Vec<_>>>()?;
    Ok(RunReport::from_runs(&dataset.name, spec.task, label, config_hash, runs))
}

/// Scores `events` against fixed negatives after replaying `history`, with
/// the weights in `store`; a convenience for ad-hoc evaluation.
pub fn score_stream(model: &TgnModel, store: &ParamStore, graph: &TemporalGraph, history: &[Event], events: &[Event], negatives: &[NodeId], batch_size: usize) -> Result<(f64, f64)> {
    let mut state = model.init_state(graph.node_count());
    model.replay(store, &mut state, graph, history, batch_size)?;
    let (pos, neg) = stream_scores(model, store, &mut state, graph, events, negatives, None, batch_size)?;
    let m = metrics_from_scores(&pos, &neg)?;
    Ok((m.auc, m.ap))
}
