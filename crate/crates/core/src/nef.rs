//! Neighborhood edge features (NEF).
//!
//! For a node pair `(i, j)` at time `t`:
//!
//! 1. sample `K` time-inverse walks from each endpoint (`S_i`, `S_j`);
//! 2. replace every node occurrence `w` by its positional frequency vectors
//!    `(g(w, S_own), g(w, S_other))`, which removes node identities;
//! 3. encode each position as `MLP(g_own) + MLP(g_other)` joined with a
//!    cosine encoding of the time gap and the step's raw attributes;
//! 4. encode each walk (bidirectional LSTM or masked mean), optionally
//!    re-weight it with self-attention, and average over all `2K` walks.
//!
//! Padded positions encode as zeros and are masked out of every encoder.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph};
use crate::tensor::{segment_attention, Activation, Linear, LstmCell, Mlp, ParamId, ParamStore, Segments, Tape, Tensor, Var};
use crate::walk::{sample_walk_set, StreamKey, WalkConfig, WalkSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkEncoderKind {
    /// Bidirectional LSTM; output is both final hidden states concatenated.
    BiRecurrent,
    /// Masked mean over positions.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkAggregator {
    SelfAttention,
    /// Plain mean over walks.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NefConfig {
    pub walk: WalkConfig,
    pub pos_dim: usize,
    pub time_dim: usize,
    pub rnn_hidden: usize,
    pub encoder: WalkEncoderKind,
    pub aggregator: WalkAggregator,
}

impl Default for NefConfig {
    fn default() -> Self {
        Self {
            walk: WalkConfig::default(),
            pos_dim: 16,
            time_dim: 16,
            rnn_hidden: 16,
            encoder: WalkEncoderKind::BiRecurrent,
            aggregator: WalkAggregator::Identity,
        }
    }
}

impl NefConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        if self.pos_dim == 0 || self.time_dim == 0 || self.rnn_hidden == 0 {
            return Err(Error::InvalidArgument("NEF widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-position occurrence counts of `w` in `set`; padded positions do not count.
pub fn positional_frequency(w: NodeId, set: &WalkSet) -> Vec<u32> {
    let len = set.walks.first().map_or(0, |walk| walk.steps.len());
    let mut g = vec![0; len];
    for walk in &set.walks {
        for (m, s) in walk.steps.iter().enumerate() {
            if !s.padded && s.node == w {
                g[m] += 1;
            }
        }
    }
    g
}

fn frequency_table(set: &WalkSet) -> HashMap<NodeId, Vec<u32>> {
    let len = set.walks.first().map_or(0, |walk| walk.steps.len());
    let mut table: HashMap<NodeId, Vec<u32>> = HashMap::new();
    for walk in &set.walks {
        for (m, s) in walk.steps.iter().enumerate() {
            if !s.padded {
                table.entry(s.node).or_insert_with(|| vec![0; len])[m] += 1;
            }
        }
    }
    table
}

/// One walk position with its node identity replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct AnonymizedStep {
    /// `g(w, S_own)` for the walk's own set.
    pub own: Vec<u32>,
    /// `g(w, S_other)` for the opposite endpoint's set.
    pub other: Vec<u32>,
    pub dt: f64,
    /// Node attributes of `w` followed by the traversed event's attributes.
    pub features: Vec<f64>,
    pub padded: bool,
}

pub type AnonymizedWalk = Vec<AnonymizedStep>;

/// Anonymized walks of both endpoints of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AnonymizedPair {
    pub walks_i: Vec<AnonymizedWalk>,
    pub walks_j: Vec<AnonymizedWalk>,
}

impl AnonymizedPair {
    /// `S_i` walks followed by `S_j` walks.
    pub fn all_walks(&self) -> impl Iterator<Item = &AnonymizedWalk> {
        self.walks_i.iter().chain(&self.walks_j)
    }
}

fn step_features(graph: &TemporalGraph, node: NodeId, event_id: Option<usize>) -> Vec<f64> {
    let mut x = Vec::with_capacity(graph.node_features().dim() + graph.edge_dim());
    x.extend_from_slice(graph.node_features().get(node));
    match event_id {
        Some(e) => x.extend_from_slice(graph.edge_features(e)),
        None => x.resize(x.len() + graph.edge_dim(), 0.0),
    }
    x
}

fn anonymize_set(graph: &TemporalGraph, set: &WalkSet, own: &HashMap<NodeId, Vec<u32>>, other: &HashMap<NodeId, Vec<u32>>) -> Vec<AnonymizedWalk> {
    let x_dim = graph.node_features().dim() + graph.edge_dim();
    set.walks
        .iter()
        .map(|walk| {
            let len = walk.steps.len();
            walk.steps
                .iter()
                .enumerate()
                .map(|(m, s)| {
                    if s.padded {
                        return AnonymizedStep { own: vec![0; len], other: vec![0; len], dt: 0.0, features: vec![0.0; x_dim], padded: true };
                    }
                    AnonymizedStep {
                        own: own[&s.node].clone(),
                        other: other.get(&s.node).cloned().unwrap_or_else(|| vec![0; len]),
                        dt: walk.dt(m),
                        features: step_features(graph, s.node, s.event_id),
                        padded: false,
                    }
                })
                .collect()
        })
        .collect()
}

/// Replaces each node of `S_i` by `(g(w,S_i), g(w,S_j))` and each node of
/// `S_j` by `(g(w,S_j), g(w,S_i))`.
pub fn anonymize(graph: &TemporalGraph, s_i: &WalkSet, s_j: &WalkSet) -> Result<AnonymizedPair> {
    if s_i.origin_t != s_j.origin_t {
        return Err(Error::InvalidArgument("walk sets must share their origin time".into()));
    }
    let gi = frequency_table(s_i);
    let gj = frequency_table(s_j);
    Ok(AnonymizedPair { walks_i: anonymize_set(graph, s_i, &gi, &gj), walks_j: anonymize_set(graph, s_j, &gj, &gi) })
}

/// Learnable cosine time encoding `cos(omega_k * dt)`.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub freq: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    /// Frequencies start on the ladder `omega_k = 10^(-5k/dim)`.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let freqs = (0..dim).map(|k| 10f64.powf(-(k as f64) * 5.0 / dim as f64)).collect();
        let freq = store.add(format!("{name}.freq"), Tensor::row(freqs))?;
        Ok(Self { freq, dim })
    }

    /// `dt` is an `r × 1` column of non-negative gaps; returns `r × dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, dt: Var) -> Result<Var> {
        let w = tape.param(store, self.freq);
        let phase = tape.matmul(dt, w)?;
        tape.cos(phase)
    }
}

/// One NEF query: the pair, the time, and the substream key (side 0 is
/// used for `i`'s walks, side 1 for `j`'s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NefRequest {
    pub i: NodeId,
    pub j: NodeId,
    pub t: f64,
    pub key: u64,
}

/// Sampled and anonymized walks for a batch of requests, laid out for the
/// batched encoder.
#[derive(Clone, Debug)]
pub struct WalkBatch {
    pub requests: usize,
    pub walks_per_request: usize,
    /// Unique positional-frequency vectors, first-appearance order.
    pub table: Vec<Vec<u32>>,
    /// `[position][walk]` index into `table`.
    pub own: Vec<Vec<usize>>,
    pub other: Vec<Vec<usize>>,
    pub dt: Vec<Vec<f64>>,
    pub mask: Vec<Vec<f64>>,
    /// `[position]` row-major `walks × x_dim`.
    pub features: Vec<Vec<f64>>,
    pub x_dim: usize,
}

impl WalkBatch {
    pub fn positions(&self) -> usize {
        self.own.len()
    }

    pub fn walks(&self) -> usize {
        self.requests * self.walks_per_request
    }

    fn from_pairs(pairs: &[AnonymizedPair], positions: usize, x_dim: usize) -> Self {
        let walks_per_request = pairs.first().map_or(0, |p| p.walks_i.len() + p.walks_j.len());
        let mut batch = WalkBatch {
            requests: pairs.len(),
            walks_per_request,
            table: Vec::new(),
            own: vec![Vec::new(); positions],
            other: vec![Vec::new(); positions],
            dt: vec![Vec::new(); positions],
            mask: vec![Vec::new(); positions],
            features: vec![Vec::new(); positions],
            x_dim,
        };
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut intern = |g: &Vec<u32>, table: &mut Vec<Vec<u32>>| {
            *index.entry(g.clone()).or_insert_with(|| {
                table.push(g.clone());
                table.len() - 1
            })
        };
        for pair in pairs {
            for walk in pair.all_walks() {
                for (m, step) in walk.iter().enumerate() {
                    let o = intern(&step.own, &mut batch.table);
                    let p = intern(&step.other, &mut batch.table);
                    batch.own[m].push(o);
                    batch.other[m].push(p);
                    batch.dt[m].push(step.dt);
                    batch.mask[m].push(if step.padded { 0.0 } else { 1.0 });
                    batch.features[m].extend_from_slice(&step.features);
                }
            }
        }
        batch
    }
}

/// The trainable NEF pipeline.
#[derive(Clone, Debug)]
pub struct NefGenerator {
    pub config: NefConfig,
    pos_mlp: Mlp,
    time: TimeEncoder,
    forward_cell: Option<LstmCell>,
    backward_cell: Option<LstmCell>,
    attention: Option<[Linear; 3]>,
    x_dim: usize,
}

impl NefGenerator {
    /// `x_dim` is the node attribute width plus the edge attribute width.
    pub fn new(store: &mut ParamStore, name: &str, config: NefConfig, x_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let positions = config.walk.length + 1;
        let pos_mlp = Mlp::new(store, &format!("{name}.pos"), &[positions, config.pos_dim, config.pos_dim], Activation::Relu, rng)?;
        let time = TimeEncoder::new(store, &format!("{name}.time"), config.time_dim)?;
        let step_dim = config.pos_dim + config.time_dim + x_dim;
        let (forward_cell, backward_cell) = match config.encoder {
            WalkEncoderKind::BiRecurrent => (
                Some(LstmCell::new(store, &format!("{name}.fwd"), step_dim, config.rnn_hidden, rng)?),
                Some(LstmCell::new(store, &format!("{name}.bwd"), step_dim, config.rnn_hidden, rng)?),
            ),
            WalkEncoderKind::Mean => (None, None),
        };
        let enc_dim = match config.encoder {
            WalkEncoderKind::BiRecurrent => 2 * config.rnn_hidden,
            WalkEncoderKind::Mean => step_dim,
        };
        let attention = match config.aggregator {
            WalkAggregator::SelfAttention => Some([
                Linear::new(store, &format!("{name}.attn_q"), step_dim, enc_dim, false, rng)?,
                Linear::new(store, &format!("{name}.attn_k"), step_dim, enc_dim, false, rng)?,
                Linear::new(store, &format!("{name}.attn_v"), step_dim, enc_dim, false, rng)?,
            ]),
            WalkAggregator::Identity => None,
        };
        Ok(Self { config, pos_mlp, time, forward_cell, backward_cell, attention, x_dim })
    }

    pub fn step_dim(&self) -> usize {
        self.config.pos_dim + self.config.time_dim + self.x_dim
    }

    /// Width of every NEF vector this generator produces.
    pub fn out_dim(&self) -> usize {
        match self.config.encoder {
            WalkEncoderKind::BiRecurrent => 2 * self.config.rnn_hidden,
            WalkEncoderKind::Mean => self.step_dim(),
        }
    }

    pub fn time_encoder(&self) -> &TimeEncoder {
        &self.time
    }

    /// Samples and anonymizes walks for every request.
    pub fn sample(&self, graph: &TemporalGraph, requests: &[NefRequest]) -> Result<WalkBatch> {
        let cfg = &self.config.walk;
        let pairs = requests
            .iter()
            .map(|r| {
                let s_i = sample_walk_set(graph, r.i, r.t, cfg, StreamKey { query: r.key, side: 0 })?;
                let s_j = sample_walk_set(graph, r.j, r.t, cfg, StreamKey { query: r.key, side: 1 })?;
                anonymize(graph, &s_i, &s_j)
            })
            .collect::<Result<Vec<_>>>()?;
        let x_dim = graph.node_features().dim() + graph.edge_dim();
        if x_dim != self.x_dim {
            return Err(Error::Shape(format!("graph attributes are {x_dim} wide, generator expects {}", self.x_dim)));
        }
        Ok(WalkBatch::from_pairs(&pairs, cfg.length + 1, x_dim))
    }

    /// Encodes every position of every walk: `[position] -> walks × step_dim`,
    /// padded rows zeroed.
    pub fn encode_steps(&self, tape: &mut Tape, store: &ParamStore, batch: &WalkBatch) -> Result<Vec<Var>> {
        let width = batch.table.first().map_or(0, Vec::len);
        if width != self.config.walk.length + 1 && !batch.table.is_empty() {
            return Err(Error::Shape(format!("frequency vectors of width {width}, expected {}", self.config.walk.length + 1)));
        }
        let table: Vec<f64> = batch.table.iter().flatten().map(|&c| c as f64).collect();
        let table = tape.constant(Tensor::new(batch.table.len(), width, table)?);
        let encoded_table = self.pos_mlp.forward(tape, store, table)?;
        let walks = batch.walks();
        let mut out = Vec::with_capacity(batch.positions());
        for m in 0..batch.positions() {
            let own = tape.gather_rows(encoded_table, batch.own[m].clone())?;
            let other = tape.gather_rows(encoded_table, batch.other[m].clone())?;
            let pos = tape.add(own, other)?;
            let dt = tape.constant(Tensor::column(batch.dt[m].clone()));
            let time = self.time.forward(tape, store, dt)?;
            let mut parts = vec![pos, time];
            if self.x_dim > 0 {
                parts.push(tape.constant(Tensor::new(walks, self.x_dim, batch.features[m].clone())?));
            }
            let h = tape.concat_cols(&parts)?;
            let h = if batch.mask[m].iter().all(|&v| v == 1.0) {
                h
            } else {
                let mask = tape.constant(Tensor::column(batch.mask[m].clone()));
                tape.mul_col(h, mask)?
            };
            out.push(h);
        }
        Ok(out)
    }

    /// Encodes each walk from its position encodings: `walks × out_dim`.
    pub fn encode_walks(&self, tape: &mut Tape, store: &ParamStore, steps: &[Var], mask: &[Vec<f64>]) -> Result<Var> {
        let walks = tape.shape(steps[0])[0];
        match (&self.forward_cell, &self.backward_cell) {
            (Some(fwd), Some(bwd)) => {
                let hf = run_lstm(tape, store, fwd, steps, mask, walks, false)?;
                let hb = run_lstm(tape, store, bwd, steps, mask, walks, true)?;
                tape.concat_cols(&[hf, hb])
            }
            _ => masked_mean(tape, steps, mask),
        }
    }

    /// Self-attention re-weighting: the mean-pooled step encoding of each
    /// walk queries that walk's own steps, and the attended value is added
    /// to the walk encoding.
    fn aggregate_walks(&self, tape: &mut Tape, store: &ParamStore, encoded: Var, steps: &[Var], mask: &[Vec<f64>]) -> Result<Var> {
        let Some([q, k, v]) = &self.attention else {
            return Ok(encoded);
        };
        let walks = tape.shape(encoded)[0];
        let stacked = tape.concat_rows(steps)?;
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for (m, mk) in mask.iter().enumerate() {
            for (w, &flag) in mk.iter().enumerate() {
                if flag > 0.0 {
                    rows.push(m * walks + w);
                    ids.push(w);
                }
            }
        }
        let real = tape.gather_rows(stacked, rows)?;
        let pooled = masked_mean(tape, steps, mask)?;
        let queries = q.forward(tape, store, pooled)?;
        let keys = k.forward(tape, store, real)?;
        let values = v.forward(tape, store, real)?;
        let seg = Segments::new(ids, walks)?;
        let context = segment_attention(tape, queries, keys, values, &seg)?.0;
        tape.add(encoded, context)
    }

    /// NEF vectors for an already sampled batch: `requests × out_dim`.
    pub fn forward_batch(&self, tape: &mut Tape, store: &ParamStore, batch: &WalkBatch) -> Result<Var> {
        if batch.requests == 0 {
            return Ok(tape.constant(Tensor::zeros(0, self.out_dim())));
        }
        let steps = self.encode_steps(tape, store, batch)?;
        let encoded = self.encode_walks(tape, store, &steps, &batch.mask)?;
        let aggregated = self.aggregate_walks(tape, store, encoded, &steps, &batch.mask)?;
        let per = batch.walks_per_request;
        let seg = Segments::new((0..batch.walks()).map(|w| w / per).collect(), batch.requests)?;
        let summed = tape.segment_sum(aggregated, &seg)?;
        tape.scale(summed, 1.0 / per as f64)
    }

    /// Samples walks and computes NEF vectors: `requests × out_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &TemporalGraph, requests: &[NefRequest]) -> Result<Var> {
        let batch = self.sample(graph, requests)?;
        self.forward_batch(tape, store, &batch)
    }

    /// `NEF_ij(t)` as a plain vector.
    pub fn nef(&self, store: &ParamStore, graph: &TemporalGraph, request: NefRequest) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, graph, &[request])?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Encoding of a single anonymized position (`1 × step_dim`); padded
    /// positions encode as zeros.
    pub fn encode_step(&self, tape: &mut Tape, store: &ParamStore, step: &AnonymizedStep) -> Result<Var> {
        let positions = self.config.walk.length + 1;
        if step.own.len() != positions || step.other.len() != positions || step.features.len() != self.x_dim {
            return Err(Error::Shape("anonymized step does not match generator config".into()));
        }
        let pair = AnonymizedPair { walks_i: vec![vec![step.clone()]], walks_j: vec![] };
        let mut batch = WalkBatch::from_pairs(&[pair], 1, self.x_dim);
        batch.walks_per_request = 1;
        let steps = self.encode_steps(tape, store, &batch)?;
        Ok(steps[0])
    }
}

/// Mean over each walk's unpadded positions; all-padded walks give zeros.
fn masked_mean(tape: &mut Tape, steps: &[Var], mask: &[Vec<f64>]) -> Result<Var> {
    let walks = tape.shape(steps[0])[0];
    let mut sum = steps[0];
    for &s in &steps[1..] {
        sum = tape.add(sum, s)?;
    }
    let inv: Vec<f64> = (0..walks)
        .map(|w| {
            let n = mask.iter().filter(|m| m[w] > 0.0).count();
            if n == 0 {
                0.0
            } else {
                1.0 / n as f64
            }
        })
        .collect();
    let inv = tape.constant(Tensor::column(inv));
    tape.mul_col(sum, inv)
}

fn run_lstm(tape: &mut Tape, store: &ParamStore, cell: &LstmCell, steps: &[Var], mask: &[Vec<f64>], walks: usize, reverse: bool) -> Result<Var> {
    let mut h = tape.constant(Tensor::zeros(walks, cell.hidden_dim));
    let mut c = tape.constant(Tensor::zeros(walks, cell.hidden_dim));
    let order: Vec<usize> = if reverse { (0..steps.len()).rev().collect() } else { (0..steps.len()).collect() };
    for m in order {
        let (h_new, c_new) = cell.forward(tape, store, steps[m], h, c)?;
        if mask[m].iter().all(|&v| v == 1.0) {
            h = h_new;
            c = c_new;
        } else if mask[m].iter().all(|&v| v == 0.0) {
            continue;
        } else {
            let mk = tape.constant(Tensor::column(mask[m].clone()));
            let dh = tape.sub(h_new, h)?;
            let dh = tape.mul_col(dh, mk)?;
            h = tape.add(h, dh)?;
            let dc = tape.sub(c_new, c)?;
            let dc = tape.mul_col(dc, mk)?;
            c = tape.add(c, dc)?;
        }
    }
    Ok(h)
}
