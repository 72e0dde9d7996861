//! Chronological mini-batch training with one negative per positive.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::sigmoid;
use crate::error::{Error, Result};
use crate::eval::{auc_roc, average_precision};
use crate::graph::{Event, EventLog, NodeFeatures, NodeId, TemporalGraph};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape};
use crate::tgn::{nef_key, role, EmbeddingQuery, TgnModel, TgnState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without a validation AP improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 200, epochs: 10, lr: 1e-3, patience: 3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }
}

/// Mixes a base seed with a stream label into an independent seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One destination per positive, drawn uniformly from `universe`, redrawn
/// (a bounded number of times) when the pair is a positive of the batch.
pub fn negative_sample(batch: &[Event], universe: &[NodeId], rng: &mut impl Rng) -> Result<Vec<NodeId>> {
    if universe.len() < 2 {
        return Err(Error::InvalidArgument("negative sampling needs at least two candidate nodes".into()));
    }
    let positives: HashSet<(NodeId, NodeId)> = batch.iter().map(|e| (e.src, e.dst)).collect();
    Ok(batch
        .iter()
        .map(|e| {
            let mut d = universe[rng.gen_range(0..universe.len())];
            for _ in 0..64 {
                if !positives.contains(&(e.src, d)) {
                    break;
                }
                d = universe[rng.gen_range(0..universe.len())];
            }
            d
        })
        .collect())
}

/// Everything the training loop and evaluator read.
#[derive(Clone, Debug)]
pub struct TrainData {
    /// Training events only.
    pub train_graph: TemporalGraph,
    /// Training-period context, validation and test events. The context
    /// is the training log unless masked nodes stay visible at test time.
    pub eval_graph: TemporalGraph,
    pub train: Vec<Event>,
    /// Training-period events evaluation replays before scoring.
    pub context: Vec<Event>,
    pub val: Vec<Event>,
    pub test: Vec<Event>,
    /// Candidate negative destinations at evaluation time.
    pub universe: Vec<NodeId>,
    /// Candidate negatives while training; excludes nodes hidden from
    /// training. Defaults to `universe`.
    pub train_universe: Vec<NodeId>,
    /// Fixed once per run.
    pub val_negatives: Vec<NodeId>,
    pub test_negatives: Vec<NodeId>,
    /// Which test events are scored (all of them stream through memory).
    pub test_scored: Vec<bool>,
    pub batch_size: usize,
}

impl TrainData {
    #[allow(clippy::too_many_arguments)]
    /// `train_context` is what evaluation sees of the training period; it
    /// defaults to `train`.
    pub fn new(
        train: &EventLog,
        train_context: Option<&EventLog>,
        val: &EventLog,
        test: &EventLog,
        node_features: &NodeFeatures,
        universe: Vec<NodeId>,
        test_scored: Vec<bool>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if test_scored.len() != test.len() {
            return Err(Error::InvalidArgument("test_scored must cover every test event".into()));
        }
        let eval_log = train_context.unwrap_or(train).chain(val).chain(test);
        let fixed = |events: &[Event], stream: u64| -> Result<Vec<NodeId>> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
            let mut out = Vec::with_capacity(events.len());
            for b in events.chunks(batch_size.max(1)) {
                out.extend(negative_sample(b, &universe, &mut rng)?);
            }
            Ok(out)
        };
        Ok(Self {
            train_graph: TemporalGraph::build(train.clone(), node_features.clone())?,
            eval_graph: TemporalGraph::build(eval_log, node_features.clone())?,
            val_negatives: fixed(val.events(), 1)?,
            test_negatives: fixed(test.events(), 2)?,
            train: train.events().to_vec(),
            context: train_context.unwrap_or(train).events().to_vec(),
            val: val.events().to_vec(),
            test: test.events().to_vec(),
            train_universe: universe.clone(),
            universe,
            test_scored,
            batch_size,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub loss: f64,
    pub auc: f64,
    pub ap: f64,
    pub seconds: f64,
}

fn queries(batch: &[Event], negatives: &[NodeId]) -> Vec<EmbeddingQuery> {
    let mut q = Vec::with_capacity(3 * batch.len());
    q.extend(batch.iter().map(|e| EmbeddingQuery { node: e.src, t: e.t, key: nef_key(e.id, role::SOURCE, 0) }));
    q.extend(batch.iter().map(|e| EmbeddingQuery { node: e.dst, t: e.t, key: nef_key(e.id, role::DESTINATION, 0) }));
    q.extend(batch.iter().zip(negatives).map(|(e, &n)| EmbeddingQuery { node: n, t: e.t, key: nef_key(e.id, role::NEGATIVE, 0) }));
    q
}

/// Binary cross-entropy of positive and negative logits.
fn batch_loss(
    model: &TgnModel,
    tape: &mut Tape,
    store: &ParamStore,
    z: crate::tensor::Var,
    b: usize,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(crate::tensor::Var, crate::tensor::Var)> {
    let zs = tape.gather_rows(z, (0..b).collect())?;
    let zd = tape.gather_rows(z, (b..2 * b).collect())?;
    let zn = tape.gather_rows(z, (2 * b..3 * b).collect())?;
    let zs2 = tape.concat_rows(&[zs, zs])?;
    let zt = tape.concat_rows(&[zd, zn])?;
    let logits = model.logits(tape, store, zs2, zt, rng)?;
    let mut targets = vec![1.0; b];
    targets.resize(2 * b, 0.0);
    let loss = tape.bce_with_logits(logits, targets)?;
    Ok((loss, logits))
}

fn pair_metrics(logits: &[f64], b: usize) -> (f64, f64) {
    let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let labels: Vec<bool> = (0..2 * b).map(|i| i < b).collect();
    (auc_roc(&scores, &labels).unwrap_or(f64::NAN), average_precision(&scores, &labels).unwrap_or(f64::NAN))
}

/// One optimization step on one chronological batch.
#[allow(clippy::too_many_arguments)]
pub fn train_batch(
    model: &TgnModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    state: &mut TgnState,
    graph: &TemporalGraph,
    batch: &[Event],
    universe: &[NodeId],
    rng: &mut ChaCha8Rng,
) -> Result<BatchResult> {
    let start = Instant::now();
    let negatives = negative_sample(batch, universe, rng)?;
    let b = batch.len();
    let mut tape = Tape::new();
    let out = model.embed(&mut tape, store, state, graph, &queries(batch, &negatives))?;
    let (loss, logits) = batch_loss(model, &mut tape, store, out.z, b, Some(rng))?;
    let loss_value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    store.zero_grad();
    grads.accumulate_into(store);
    adam.step(store);
    let (auc, ap) = pair_metrics(tape.value(logits).data(), b);
    model.finish_batch(store, state, graph, &tape, out.flush, batch)?;
    Ok(BatchResult { loss: loss_value, auc, ap, seconds: start.elapsed().as_secs_f64() })
}

/// Trains over `events` in chronological batches from a fresh memory.
pub fn train_epoch(
    model: &TgnModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    data: &TrainData,
    epoch: usize,
    seed: u64,
) -> Result<(Vec<BatchResult>, TgnState)> {
    let mut state = model.init_state(data.train_graph.node_count());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + epoch as u64));
    let mut results = Vec::new();
    for (k, batch) in data.train.chunks(data.batch_size).enumerate() {
        let r = train_batch(model, store, adam, &mut state, &data.train_graph, batch, &data.train_universe, &mut rng)
            .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {k}: {e}")))?;
        results.push(r);
    }
    Ok((results, state))
}

/// Positive and negative scores for the scored events of `events`, which
/// all stream through memory afterwards.
#[allow(clippy::too_many_arguments)]
pub fn stream_scores(
    model: &TgnModel,
    store: &ParamStore,
    state: &mut TgnState,
    graph: &TemporalGraph,
    events: &[Event],
    negatives: &[NodeId],
    scored: Option<&[bool]>,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (k, batch) in events.chunks(batch_size.max(1)).enumerate() {
        let base = k * batch_size.max(1);
        let picked: Vec<usize> = (0..batch.len()).filter(|&i| scored.map_or(true, |s| s[base + i])).collect();
        let mut tape = Tape::new();
        let mut flush = None;
        if !picked.is_empty() {
            let ev: Vec<Event> = picked.iter().map(|&i| batch[i]).collect();
            let ng: Vec<NodeId> = picked.iter().map(|&i| negatives[base + i]).collect();
            let out = model.embed(&mut tape, store, state, graph, &queries(&ev, &ng))?;
            let (_, logits) = batch_loss(model, &mut tape, store, out.z, ev.len(), None)?;
            let l = tape.value(logits).data();
            pos.extend(l[..ev.len()].iter().map(|&v| sigmoid(v)));
            neg.extend(l[ev.len()..].iter().map(|&v| sigmoid(v)));
            flush = out.flush;
        }
        model.finish_batch(store, state, graph, &tape, flush, batch)?;
    }
    Ok((pos, neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub auc: f64,
    pub ap: f64,
    pub positives: usize,
}

pub fn metrics_from_scores(pos: &[f64], neg: &[f64]) -> Result<EvalMetrics> {
    let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < pos.len()).collect();
    Ok(EvalMetrics { auc: auc_roc(&scores, &labels)?, ap: average_precision(&scores, &labels)?, positives: pos.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Val,
    Test,
}

/// Rebuilds memory from the training (and, for the test stage, validation)
/// events with the current weights, then scores the stage's events.
pub fn evaluate(model: &TgnModel, store: &ParamStore, data: &TrainData, stage: Stage) -> Result<EvalMetrics> {
    let graph = &data.eval_graph;
    let mut state = model.init_state(graph.node_count());
    model.replay(store, &mut state, graph, &data.context, data.batch_size)?;
    let (pos, neg) = match stage {
        Stage::Val => stream_scores(model, store, &mut state, graph, &data.val, &data.val_negatives, None, data.batch_size)?,
        Stage::Test => {
            model.replay(store, &mut state, graph, &data.val, data.batch_size)?;
            stream_scores(model, store, &mut state, graph, &data.test, &data.test_negatives, Some(&data.test_scored), data.batch_size)?
        }
    };
    if pos.is_empty() {
        return Err(Error::InvalidArgument(format!("no {stage:?} events to score")));
    }
    metrics_from_scores(&pos, &neg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: f64,
    pub train_ap: f64,
    pub val_auc: Option<f64>,
    pub val_ap: Option<f64>,
    pub seconds: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ap: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains with early stopping on validation AP and leaves the best epoch's
/// weights in `store`. Each epoch record is written as one JSON line to
/// `history` when given.
pub fn train(
    model: &TgnModel,
    store: &mut ParamStore,
    data: &TrainData,
    cfg: &TrainConfig,
    config_hash: &str,
    mut history: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut records = Vec::new();
    let mut best: Option<(usize, Option<f64>, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (results, _) = train_epoch(model, store, &mut adam, data, epoch, cfg.seed)?;
        let val = if data.val.is_empty() { None } else { Some(evaluate(model, store, data, Stage::Val)?) };
        let rec = EpochRecord {
            epoch,
            train_loss: mean(results.iter().map(|r| r.loss)),
            train_auc: mean(results.iter().map(|r| r.auc).filter(|v| v.is_finite())),
            train_ap: mean(results.iter().map(|r| r.ap).filter(|v| v.is_finite())),
            val_auc: val.map(|m| m.auc),
            val_ap: val.map(|m| m.ap),
            seconds: start.elapsed().as_secs_f64(),
            config_hash: config_hash.to_string(),
        };
        if let Some(w) = history.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        let improved = match (&best, rec.val_ap) {
            (None, _) => true,
            (Some((_, Some(b), _)), Some(v)) => v > *b,
            (Some(_), None) => true,
            (Some((_, None, _)), Some(_)) => true,
        };
        if improved {
            best = Some((epoch, rec.val_ap, store.clone()));
        }
        records.push(rec);
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val_ap, best_store) = best.expect("at least one epoch ran");
    *store = best_store;
    Ok(TrainOutcome { history: records, best_epoch, best_val_ap })
}
