//! Memory-based temporal graph network with neighborhood edge features in
//! its messages and in its attention embeddings.
//!
//! Per batch the caller:
//!
//! 1. calls [`TgnModel::embed`], which folds pending messages of every node
//!    it reads into memory (on the tape) before computing embeddings;
//! 2. scores pairs with [`TgnModel::logits`] and optimizes;
//! 3. calls [`TgnModel::commit`] to persist the detached memory rows;
//! 4. calls [`TgnModel::store_messages`] with the batch's events.

pub mod memory;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use memory::{
    aggregate_messages, aggregate_on_tape, update_memory, verify_protocol, Aggregation, MemoryBank, MemoryInit, MessageStore,
    ProtocolRecord, ProtocolStep, RawMessage,
};

use crate::decoder::{Dropout, EdgeDecoder};
use crate::error::{Error, Result};
use crate::graph::{AdjEntry, Event, NodeId, TemporalGraph};
use crate::nef::{NefConfig, NefGenerator, NefRequest, TimeEncoder, WalkEncoderKind};
use crate::tensor::{segment_attention, GruCell, Linear, ParamStore, Segments, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mem_dim: usize,
    pub emb_dim: usize,
    pub time_dim: usize,
    /// Most recent distinct neighbors attended per hop (`n`).
    pub neighbors: usize,
    /// Attention hops (`k`, 1 or 2); only the first hop sees NEF.
    pub hops: usize,
    pub use_msg_nef: bool,
    pub use_emb_nef: bool,
    pub nef: NefConfig,
    pub aggregation: Aggregation,
    pub memory_init: MemoryInit,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mem_dim: 32,
            emb_dim: 32,
            time_dim: 16,
            neighbors: 10,
            hops: 1,
            use_msg_nef: true,
            use_emb_nef: true,
            nef: NefConfig::default(),
            aggregation: Aggregation::Mean,
            memory_init: MemoryInit::Gaussian,
            dropout: 0.1,
            seed: 0,
        }
    }
}

/// The three ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Toggles {
    /// NEF in messages.
    pub msg: bool,
    /// NEF in embeddings.
    pub emb: bool,
    /// Recurrent walk encoder (otherwise masked mean).
    pub rnn: bool,
}

impl Toggles {
    pub const BASELINE: Toggles = Toggles { msg: false, emb: false, rnn: false };
    pub const FULL: Toggles = Toggles { msg: true, emb: true, rnn: true };

    /// Combinations with at least one NEF path on, strongest first, then
    /// the baseline. `include_rnn_only` adds the recurrent-encoder-only row,
    /// which has no NEF path to act on.
    pub fn ablation_grid(include_rnn_only: bool) -> Vec<Toggles> {
        let t = |msg, emb, rnn| Toggles { msg, emb, rnn };
        let mut grid = vec![
            t(true, true, true),
            t(true, true, false),
            t(true, false, true),
            t(false, true, true),
            t(true, false, false),
            t(false, true, false),
        ];
        if include_rnn_only {
            grid.push(t(false, false, true));
        }
        grid.push(Toggles::BASELINE);
        grid
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.msg {
            parts.push("(Msg)");
        }
        if self.emb {
            parts.push("(Emb)");
        }
        if self.rnn {
            parts.push("(RNN)");
        }
        if parts.is_empty() || (!self.msg && !self.emb) {
            if self.rnn {
                return "(RNN) only".into();
            }
            return "TGN baseline".into();
        }
        parts.join("+")
    }

    pub fn apply(&self, cfg: &mut ModelConfig) {
        cfg.use_msg_nef = self.msg;
        cfg.use_emb_nef = self.emb;
        cfg.nef.encoder = if self.rnn { WalkEncoderKind::BiRecurrent } else { WalkEncoderKind::Mean };
    }

    pub fn of(cfg: &ModelConfig) -> Toggles {
        Toggles { msg: cfg.use_msg_nef, emb: cfg.use_emb_nef, rnn: cfg.nef.encoder == WalkEncoderKind::BiRecurrent }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mem_dim == 0 || self.emb_dim == 0 || self.time_dim == 0 {
            return Err(Error::InvalidArgument("model widths must be >= 1".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidArgument("neighbors must be >= 1".into()));
        }
        if !(1..=2).contains(&self.hops) {
            return Err(Error::InvalidArgument(format!("hops must be 1 or 2, got {}", self.hops)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.use_msg_nef || self.use_emb_nef {
            self.nef.validate()?;
        }
        Ok(())
    }

    fn uses_nef(&self) -> bool {
        self.use_msg_nef || self.use_emb_nef
    }
}

/// Substream key roles; combined with an event ordinal and a slot.
pub mod role {
    pub const MESSAGE: u64 = 0;
    pub const SOURCE: u64 = 1;
    pub const DESTINATION: u64 = 2;
    pub const NEGATIVE: u64 = 3;
    pub const PROBE: u64 = 4;
}

/// Walk-sampling key for the `slot`-th NEF of a query made on behalf of
/// event `event` in `role`.
pub fn nef_key(event: usize, role: u64, slot: usize) -> u64 {
    ((event as u64) << 16) | (role << 12) | (slot as u64 & 0xfff)
}

/// A node whose embedding is wanted at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingQuery {
    pub node: NodeId,
    pub t: f64,
    /// Base for the NEF substream keys of this query's neighbor slots.
    pub key: u64,
}

#[derive(Clone, Debug)]
struct AttentionHop {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
}

impl AttentionHop {
    fn new(store: &mut ParamStore, name: &str, q_dim: usize, kv_dim: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), q_dim, d, true, rng)?,
            key: Linear::new(store, &format!("{name}.k"), kv_dim, d, false, rng)?,
            value: Linear::new(store, &format!("{name}.v"), kv_dim, d, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), d, d, false, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var, seg: &Segments) -> Result<(Var, Var)> {
        let q = self.query.forward(tape, store, q_in)?;
        let k = self.key.forward(tape, store, kv_in)?;
        let v = self.value.forward(tape, store, kv_in)?;
        let (ctx, w) = segment_attention(tape, q, k, v, seg)?;
        Ok((self.out.forward(tape, store, ctx)?, w))
    }
}

/// Mutable per-run state: memory, pending messages, and an optional trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TgnState {
    pub memory: MemoryBank,
    pub messages: MessageStore,
    pub batch: usize,
    pub recorder: Option<Vec<ProtocolRecord>>,
}

impl TgnState {
    fn record(&mut self, node: NodeId, step: ProtocolStep) {
        let batch = self.batch;
        if let Some(r) = self.recorder.as_mut() {
            r.push(ProtocolRecord { batch, node, step });
        }
    }
}

/// Memory rows recomputed on the tape, waiting to be committed.
#[derive(Debug)]
pub struct PendingFlush {
    pub nodes: Vec<NodeId>,
    pub times: Vec<f64>,
    pub rows: Var,
}

/// Output of [`TgnModel::embed`].
#[derive(Debug)]
pub struct Embedded {
    /// One row per query.
    pub z: Var,
    pub flush: Option<PendingFlush>,
    /// Hop-1 attention weights, one row per (query, neighbor) pair in
    /// query order, if any neighbor exists.
    pub attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct TgnModel {
    pub config: ModelConfig,
    node_dim: usize,
    edge_dim: usize,
    time: TimeEncoder,
    nef: Option<NefGenerator>,
    gru: GruCell,
    self_proj: Linear,
    hop1: AttentionHop,
    hop2: Option<AttentionHop>,
    pub decoder: EdgeDecoder,
}

impl TgnModel {
    /// Builds the model and its freshly initialized parameters.
    pub fn new(config: ModelConfig, node_dim: usize, edge_dim: usize) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let time = TimeEncoder::new(&mut store, "msg_time", config.time_dim)?;
        let nef = if config.uses_nef() {
            Some(NefGenerator::new(&mut store, "nef", config.nef, node_dim + edge_dim, &mut rng)?)
        } else {
            None
        };
        let nef_dim = nef.as_ref().map_or(0, NefGenerator::out_dim);
        let d = config.mem_dim;
        let msg_dim = 2 * d + config.time_dim + edge_dim + if config.use_msg_nef { nef_dim } else { 0 };
        let gru = GruCell::new(&mut store, "memory_gru", msg_dim, d, &mut rng)?;
        let e = config.emb_dim;
        let self_proj = Linear::new(&mut store, "embed.self", d + node_dim, e, true, &mut rng)?;
        let q_dim = d + node_dim + config.time_dim;
        let kv1 = d + node_dim + edge_dim + config.time_dim + if config.use_emb_nef { nef_dim } else { 0 };
        let hop1 = AttentionHop::new(&mut store, "embed.hop1", q_dim, kv1, e, &mut rng)?;
        let hop2 = if config.hops == 2 {
            Some(AttentionHop::new(&mut store, "embed.hop2", q_dim, d + node_dim + edge_dim + config.time_dim, e, &mut rng)?)
        } else {
            None
        };
        let decoder = EdgeDecoder::new(&mut store, "decoder", e, &mut rng)?;
        Ok((Self { config, node_dim, edge_dim, time, nef, gru, self_proj, hop1, hop2, decoder }, store))
    }

    pub fn nef(&self) -> Option<&NefGenerator> {
        self.nef.as_ref()
    }

    pub fn time_encoder(&self) -> &TimeEncoder {
        &self.time
    }

    pub fn memory_updater(&self) -> &GruCell {
        &self.gru
    }

    /// Width of `m_i(t)`.
    pub fn message_dim(&self) -> usize {
        self.gru.in_dim
    }

    /// Fresh memory (seeded from the model seed) and an empty store.
    pub fn init_state(&self, node_count: usize) -> TgnState {
        TgnState {
            memory: MemoryBank::new(node_count, self.config.mem_dim, self.config.memory_init, self.config.seed ^ 0x6d65_6d6f),
            messages: MessageStore::new(node_count),
            batch: 0,
            recorder: None,
        }
    }

    fn check_graph(&self, graph: &TemporalGraph, state: &TgnState) -> Result<()> {
        if graph.node_features().dim() != self.node_dim || graph.edge_dim() != self.edge_dim {
            return Err(Error::Shape(format!(
                "graph has node/edge widths {}/{}, model expects {}/{}",
                graph.node_features().dim(),
                graph.edge_dim(),
                self.node_dim,
                self.edge_dim
            )));
        }
        if graph.node_count() != state.memory.node_count() {
            return Err(Error::Shape("memory and graph cover different node counts".into()));
        }
        Ok(())
    }

    /// `m_i(t)` rows for `msgs`, oldest first within each node.
    pub fn messages(&self, tape: &mut Tape, store: &ParamStore, graph: &TemporalGraph, msgs: &[RawMessage]) -> Result<Var> {
        let d = self.config.mem_dim;
        let n = msgs.len();
        let mut s_node = Vec::with_capacity(n * d);
        let mut s_other = Vec::with_capacity(n * d);
        let mut dt = Vec::with_capacity(n);
        let mut edge = Vec::with_capacity(n * self.edge_dim);
        for m in msgs {
            s_node.extend_from_slice(&m.s_node);
            s_other.extend_from_slice(&m.s_other);
            dt.push(m.dt);
            edge.extend_from_slice(graph.edge_features(m.event_id));
        }
        let mut parts = vec![tape.constant(Tensor::new(n, d, s_node)?), tape.constant(Tensor::new(n, d, s_other)?)];
        let dt = tape.constant(Tensor::column(dt));
        parts.push(self.time.forward(tape, store, dt)?);
        if self.edge_dim > 0 {
            parts.push(tape.constant(Tensor::new(n, self.edge_dim, edge)?));
        }
        if self.config.use_msg_nef {
            let nef = self.nef.as_ref().expect("NEF generator present when messages use it");
            let mut slot: HashMap<usize, usize> = HashMap::new();
            let mut requests = Vec::new();
            let mut index = Vec::with_capacity(n);
            for m in msgs {
                let s = *slot.entry(m.event_id).or_insert_with(|| {
                    let (i, j) = if m.outgoing { (m.node, m.other) } else { (m.other, m.node) };
                    requests.push(NefRequest { i, j, t: m.t, key: nef_key(m.event_id, role::MESSAGE, 0) });
                    requests.len() - 1
                });
                index.push(s);
            }
            let rows = nef.forward(tape, store, graph, &requests)?;
            parts.push(tape.gather_rows(rows, index)?);
        }
        tape.concat_cols(&parts)
    }

    /// Folds the pending messages of those `nodes` that have any into new
    /// memory rows on the tape. The messages leave the store; the bank is
    /// unchanged until [`TgnModel::commit`].
    pub fn flush(&self, tape: &mut Tape, store: &ParamStore, state: &mut TgnState, graph: &TemporalGraph, nodes: &[NodeId]) -> Result<Option<PendingFlush>> {
        let mut targets: Vec<NodeId> = nodes.iter().copied().filter(|&n| state.messages.has_pending(n)).collect();
        targets.sort_unstable();
        targets.dedup();
        if targets.is_empty() {
            return Ok(None);
        }
        let mut msgs = Vec::new();
        let mut ids = Vec::new();
        let mut times = Vec::with_capacity(targets.len());
        for (slot, &n) in targets.iter().enumerate() {
            let taken = state.messages.take(n);
            times.push(taken.iter().map(|m| m.t).fold(f64::NEG_INFINITY, f64::max));
            ids.extend(std::iter::repeat(slot).take(taken.len()));
            msgs.extend(taken);
            state.record(n, ProtocolStep::Flush);
        }
        let m = self.messages(tape, store, graph, &msgs)?;
        let seg = Segments::new(ids, targets.len())?;
        let agg = aggregate_on_tape(tape, m, &seg, self.config.aggregation)?;
        let h = tape.constant(state.memory.rows(&targets));
        let rows = self.gru.forward(tape, store, agg, h)?;
        Ok(Some(PendingFlush { nodes: targets, times, rows }))
    }

    /// Writes flushed rows (detached) into the memory bank.
    pub fn commit(&self, tape: &Tape, state: &mut TgnState, flush: Option<PendingFlush>) -> Result<()> {
        let Some(f) = flush else { return Ok(()) };
        let values = tape.value(f.rows);
        for (r, (&node, &t)) in f.nodes.iter().zip(&f.times).enumerate() {
            state.memory.set(node, values.row_slice(r), t)?;
        }
        Ok(())
    }

    fn hop2_neighbors(&self, graph: &TemporalGraph, q: &EmbeddingQuery, hop1: &[AdjEntry]) -> Result<Vec<AdjEntry>> {
        let mut best: HashMap<NodeId, AdjEntry> = HashMap::new();
        for w in hop1 {
            for a in graph.distinct_neighbors_before(w.neighbor, q.t, self.config.neighbors)? {
                if a.neighbor == q.node {
                    continue;
                }
                let e = best.entry(a.neighbor).or_insert(a);
                if (a.t, a.event_id) > (e.t, e.event_id) {
                    *e = a;
                }
            }
        }
        let mut out: Vec<AdjEntry> = best.into_values().collect();
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.event_id.cmp(&b.event_id)).then(a.neighbor.cmp(&b.neighbor)));
        let keep = out.len().saturating_sub(self.config.neighbors);
        Ok(out.split_off(keep))
    }

    /// Embeddings `z_i(t)` for every query (one row each).
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &mut TgnState,
        graph: &TemporalGraph,
        queries: &[EmbeddingQuery],
    ) -> Result<Embedded> {
        self.check_graph(graph, state)?;
        let hop1 = queries
            .iter()
            .map(|q| graph.distinct_neighbors_before(q.node, q.t, self.config.neighbors))
            .collect::<Result<Vec<_>>>()?;
        let hop2 = match self.hop2 {
            Some(_) => queries.iter().zip(&hop1).map(|(q, h)| self.hop2_neighbors(graph, q, h)).collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        let mut needed: Vec<NodeId> = Vec::new();
        let mut slot: HashMap<NodeId, usize> = HashMap::new();
        let mut intern = |n: NodeId| {
            *slot.entry(n).or_insert_with(|| {
                needed.push(n);
                needed.len() - 1
            })
        };
        let q_idx: Vec<usize> = queries.iter().map(|q| intern(q.node)).collect();
        let h1_idx: Vec<usize> = hop1.iter().flatten().map(|a| intern(a.neighbor)).collect();
        let h2_idx: Vec<usize> = hop2.iter().flatten().map(|a| intern(a.neighbor)).collect();

        let flush = self.flush(tape, store, state, graph, &needed)?;
        let base = tape.constant(state.memory.rows(&needed));
        let mem = match &flush {
            Some(f) => {
                let all = tape.concat_rows(&[base, f.rows])?;
                let mut map: Vec<usize> = (0..needed.len()).collect();
                for (p, n) in f.nodes.iter().enumerate() {
                    map[slot[n]] = needed.len() + p;
                }
                tape.gather_rows(all, map)?
            }
            None => base,
        };
        for &n in &needed {
            state.record(n, ProtocolStep::Infer);
        }
        let feats = if self.node_dim > 0 {
            let mut v = Vec::with_capacity(needed.len() * self.node_dim);
            for &n in &needed {
                v.extend_from_slice(graph.node_features().get(n));
            }
            Some(tape.constant(Tensor::new(needed.len(), self.node_dim, v)?))
        } else {
            None
        };
        let node_part = |tape: &mut Tape, idx: &[usize]| -> Result<Vec<Var>> {
            let mut parts = vec![tape.gather_rows(mem, idx.to_vec())?];
            if let Some(f) = feats {
                parts.push(tape.gather_rows(f, idx.to_vec())?);
            }
            Ok(parts)
        };

        let nq = queries.len();
        let self_in = node_part(tape, &q_idx)?;
        let self_in = tape.concat_cols(&self_in)?;
        let mut z = self.self_proj.forward(tape, store, self_in)?;
        let mut q_in = node_part(tape, &q_idx)?;
        let zero_dt = tape.constant(Tensor::zeros(nq, 1));
        q_in.push(self.time.forward(tape, store, zero_dt)?);
        let q_in = tape.concat_cols(&q_in)?;

        let mut attention = None;
        if !h1_idx.is_empty() {
            let mut seg_ids = Vec::with_capacity(h1_idx.len());
            let mut requests = Vec::new();
            for (qi, (q, nb)) in queries.iter().zip(&hop1).enumerate() {
                for (s, a) in nb.iter().enumerate() {
                    seg_ids.push(qi);
                    requests.push(NefRequest { i: q.node, j: a.neighbor, t: q.t, key: q.key | s as u64 });
                }
            }
            let edges: Vec<&AdjEntry> = hop1.iter().flatten().collect();
            let nodes = node_part(tape, &h1_idx)?;
            let mut kv = self.neighbor_inputs(tape, store, graph, &nodes, &edges, queries, &seg_ids)?;
            if self.config.use_emb_nef {
                let nef = self.nef.as_ref().expect("NEF generator present when embeddings use it");
                kv.push(nef.forward(tape, store, graph, &requests)?);
            }
            let kv = tape.concat_cols(&kv)?;
            let seg = Segments::new(seg_ids, nq)?;
            let (ctx, w) = self.hop1.forward(tape, store, q_in, kv, &seg)?;
            z = tape.add(z, ctx)?;
            attention = Some(w);
        }
        if let Some(h2) = &self.hop2 {
            if !h2_idx.is_empty() {
                let seg_ids: Vec<usize> = hop2.iter().enumerate().flat_map(|(qi, nb)| std::iter::repeat(qi).take(nb.len())).collect();
                let edges: Vec<&AdjEntry> = hop2.iter().flatten().collect();
                let nodes = node_part(tape, &h2_idx)?;
                let kv = self.neighbor_inputs(tape, store, graph, &nodes, &edges, queries, &seg_ids)?;
                let kv = tape.concat_cols(&kv)?;
                let seg = Segments::new(seg_ids, nq)?;
                let (ctx, _) = h2.forward(tape, store, q_in, kv, &seg)?;
                z = tape.add(z, ctx)?;
            }
        }
        Ok(Embedded { z, flush, attention })
    }

    /// `[s_j, v_j, e_ij, φ(t - t_ij)]` blocks for neighbor rows.
    #[allow(clippy::too_many_arguments)]
    fn neighbor_inputs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &TemporalGraph,
        node_part: &[Var],
        edges: &[&AdjEntry],
        queries: &[EmbeddingQuery],
        seg_ids: &[usize],
    ) -> Result<Vec<Var>> {
        let mut parts = node_part.to_vec();
        if self.edge_dim > 0 {
            let mut e = Vec::with_capacity(edges.len() * self.edge_dim);
            for a in edges {
                e.extend_from_slice(graph.edge_features(a.event_id));
            }
            parts.push(tape.constant(Tensor::new(edges.len(), self.edge_dim, e)?));
        }
        let dt: Vec<f64> = edges.iter().zip(seg_ids).map(|(a, &qi)| queries[qi].t - a.t).collect();
        let dt = tape.constant(Tensor::column(dt));
        parts.push(self.time.forward(tape, store, dt)?);
        Ok(parts)
    }

    /// Edge logits for row-aligned source and destination embeddings.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, z_src: Var, z_dst: Var, rng: Option<&mut dyn rand::RngCore>) -> Result<Var> {
        let dropout = rng.map(|r| (Dropout { rate: self.config.dropout }, r));
        self.decoder.logits(tape, store, z_src, z_dst, dropout)
    }

    /// Appends a message for both endpoints of every event. Every endpoint
    /// must have been flushed first.
    pub fn store_messages(&self, state: &mut TgnState, events: &[Event]) -> Result<()> {
        for e in events {
            for n in [e.src, e.dst] {
                if n >= state.memory.node_count() {
                    return Err(Error::UnknownNode(n));
                }
                if state.messages.has_pending(n) {
                    return Err(Error::InvalidArgument(format!("node {n} still holds unflushed messages")));
                }
            }
        }
        for e in events {
            for (node, other, outgoing) in [(e.src, e.dst, true), (e.dst, e.src, false)] {
                let msg = RawMessage {
                    node,
                    other,
                    t: e.t,
                    event_id: e.id,
                    outgoing,
                    s_node: state.memory.get(node).to_vec(),
                    s_other: state.memory.get(other).to_vec(),
                    dt: state.memory.elapsed(node, e.t),
                };
                state.messages.push(msg);
                state.record(node, ProtocolStep::Store);
            }
        }
        state.batch += 1;
        Ok(())
    }

    /// Ends a batch: commits `flush`, folds in pending messages of any
    /// endpoint that was not read during the batch, then stores the batch's
    /// messages.
    pub fn finish_batch(
        &self,
        store: &ParamStore,
        state: &mut TgnState,
        graph: &TemporalGraph,
        tape: &Tape,
        flush: Option<PendingFlush>,
        events: &[Event],
    ) -> Result<()> {
        self.commit(tape, state, flush)?;
        let rest: Vec<NodeId> = events.iter().flat_map(|e| [e.src, e.dst]).filter(|&n| state.messages.has_pending(n)).collect();
        if !rest.is_empty() {
            let mut t2 = Tape::new();
            let f = self.flush(&mut t2, store, state, graph, &rest)?;
            self.commit(&t2, state, f)?;
        }
        self.store_messages(state, events)
    }

    /// Streams `events` through memory without computing embeddings.
    pub fn replay(&self, store: &ParamStore, state: &mut TgnState, graph: &TemporalGraph, events: &[Event], batch_size: usize) -> Result<()> {
        let empty = Tape::new();
        for batch in events.chunks(batch_size.max(1)) {
            self.finish_batch(store, state, graph, &empty, None, batch)?;
        }
        Ok(())
    }

    /// Embedding values for `queries`, committing any memory flushes.
    pub fn infer(&self, store: &ParamStore, state: &mut TgnState, graph: &TemporalGraph, queries: &[EmbeddingQuery]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.embed(&mut tape, store, state, graph, queries)?;
        let z = tape.value(out.z).clone();
        self.commit(&tape, state, out.flush)?;
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EventLog, NodeFeatures};
    use crate::walk::WalkConfig;

    fn small_config(toggles: Toggles) -> ModelConfig {
        let mut cfg = ModelConfig {
            mem_dim: 4,
            emb_dim: 4,
            time_dim: 3,
            neighbors: 3,
            hops: 1,
            nef: NefConfig {
                walk: WalkConfig { walks_per_node: 2, length: 2, alpha: 0.1, seed: 5 },
                pos_dim: 3,
                time_dim: 2,
                rnn_hidden: 2,
                ..NefConfig::default()
            },
            dropout: 0.0,
            seed: 11,
            ..ModelConfig::default()
        };
        toggles.apply(&mut cfg);
        cfg
    }

    fn graph() -> TemporalGraph {
        let raw = vec![(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0), (3, 0, 4.0), (1, 3, 5.0)];
        let feats = raw.iter().enumerate().map(|(i, _)| i as f64 * 0.1).collect();
        TemporalGraph::build(EventLog::new(5, 1, raw, feats).unwrap(), NodeFeatures::empty()).unwrap()
    }

    #[test]
    fn message_width_follows_toggles() {
        let (base, _) = TgnModel::new(small_config(Toggles::BASELINE), 0, 1).unwrap();
        assert_eq!(base.message_dim(), 2 * 4 + 3 + 1);
        assert!(base.nef().is_none());
        let (full, _) = TgnModel::new(small_config(Toggles::FULL), 0, 1).unwrap();
        assert_eq!(full.message_dim(), 2 * 4 + 3 + 1 + full.nef().unwrap().out_dim());
    }

    #[test]
    fn message_is_manual_concatenation() {
        let g = graph();
        let (model, store) = TgnModel::new(small_config(Toggles::FULL), 0, 1).unwrap();
        let msg = RawMessage { node: 2, other: 0, t: 3.0, event_id: 2, outgoing: false, s_node: vec![0.1; 4], s_other: vec![-0.2; 4], dt: 0.0 };
        let mut tape = Tape::new();
        let m = model.messages(&mut tape, &store, &g, &[msg]).unwrap();
        let row = tape.value(m).row_slice(0).to_vec();
        let nef = model.nef().unwrap().nef(&store, &g, NefRequest { i: 0, j: 2, t: 3.0, key: nef_key(2, role::MESSAGE, 0) }).unwrap();
        let mut want = vec![0.1; 4];
        want.extend([-0.2; 4]);
        want.extend([1.0; 3]);
        want.push(0.2);
        want.extend(nef);
        assert_eq!(row, want);
    }

    #[test]
    fn isolated_node_embedding_is_self_projection() {
        let g = graph();
        let (model, store) = TgnModel::new(small_config(Toggles::FULL), 0, 1).unwrap();
        let mut state = model.init_state(5);
        let z = model.infer(&store, &mut state, &g, &[EmbeddingQuery { node: 4, t: 10.0, key: 0 }]).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::row(state.memory.get(4).to_vec()));
        let want = model.self_proj.forward(&mut tape, &store, s).unwrap();
        assert_eq!(z.data(), tape.value(want).data());
    }

    #[test]
    fn replay_then_flush_discipline() {
        let g = graph();
        let (model, store) = TgnModel::new(small_config(Toggles::FULL), 0, 1).unwrap();
        let mut state = model.init_state(5);
        state.recorder = Some(Vec::new());
        model.replay(&store, &mut state, &g, g.log().events(), 2).unwrap();
        assert!(verify_protocol(state.recorder.as_ref().unwrap()).is_ok());
        assert!(state.messages.has_pending(3));
        assert_eq!(state.memory.last_update(0), 1.0);
        assert!(state.messages.has_pending(0));
        let before = state.memory.get(3).to_vec();
        model.infer(&store, &mut state, &g, &[EmbeddingQuery { node: 3, t: 6.0, key: 0 }]).unwrap();
        assert_ne!(state.memory.get(3), &before[..]);
        assert!(!state.messages.has_pending(3));
        assert_eq!(state.memory.last_update(3), 5.0);
    }

    #[test]
    fn ablation_grid_shapes() {
        let grid = Toggles::ablation_grid(false);
        assert_eq!(grid.len(), 7);
        assert_eq!(grid[0], Toggles::FULL);
        assert_eq!(*grid.last().unwrap(), Toggles::BASELINE);
        assert_eq!(Toggles::ablation_grid(true).len(), 8);
        assert_eq!(Toggles::FULL.label(), "(Msg)+(Emb)+(RNN)");
        assert_eq!(Toggles::BASELINE.label(), "TGN baseline");
    }
}
