//! Per-node memory, pending raw messages, and the instrumentation used to
//! check the order in which they are touched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::tensor::{GruCell, ParamStore, Segments, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryInit {
    /// Seeded `N(0, 0.1²)` per coordinate.
    Gaussian,
    Zeros,
}

/// `s_i` and `t⁻_i` for every node.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    values: Vec<f64>,
    last_update: Vec<f64>,
}

impl MemoryBank {
    pub fn new(node_count: usize, dim: usize, init: MemoryInit, seed: u64) -> Self {
        let values = match init {
            MemoryInit::Zeros => vec![0.0; node_count * dim],
            MemoryInit::Gaussian => {
                let normal = Normal::new(0.0, 0.1).expect("valid normal");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..node_count * dim).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        Self { dim, values, last_update: vec![f64::NEG_INFINITY; node_count] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.last_update.len()
    }

    pub fn get(&self, node: NodeId) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// `t⁻_i`; `-inf` before the first update.
    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node]
    }

    /// Time since the node's last update (0 if it was never updated).
    pub fn elapsed(&self, node: NodeId, t: f64) -> f64 {
        let last = self.last_update[node];
        if last.is_finite() {
            t - last
        } else {
            0.0
        }
    }

    pub fn set(&mut self, node: NodeId, value: &[f64], t: f64) -> Result<()> {
        if node >= self.node_count() {
            return Err(Error::UnknownNode(node));
        }
        if value.len() != self.dim {
            return Err(Error::Shape(format!("memory row of width {} for dim {}", value.len(), self.dim)));
        }
        if t < self.last_update[node] {
            return Err(Error::TimeRegression { node, t, last: self.last_update[node] });
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("memory update"));
        }
        self.values[node * self.dim..(node + 1) * self.dim].copy_from_slice(value);
        self.last_update[node] = t;
        Ok(())
    }

    /// Memory rows of `nodes` as an `n × dim` tensor.
    pub fn rows(&self, nodes: &[NodeId]) -> Tensor {
        let mut data = Vec::with_capacity(nodes.len() * self.dim);
        for &n in nodes {
            data.extend_from_slice(self.get(n));
        }
        Tensor::new(nodes.len(), self.dim, data).expect("consistent memory rows")
    }
}

/// Inputs of one message `m_i(t)`, captured when the event is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMessage {
    pub node: NodeId,
    pub other: NodeId,
    pub t: f64,
    pub event_id: usize,
    /// `true` when `node` was the event's source.
    pub outgoing: bool,
    /// `s_node(t⁻)` at storage time.
    pub s_node: Vec<f64>,
    /// `s_other(t⁻)` at storage time.
    pub s_other: Vec<f64>,
    /// `t - t⁻_node` at storage time.
    pub dt: f64,
}

/// Messages waiting for each node's next memory update.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageStore {
    pending: Vec<Vec<RawMessage>>,
}

impl MessageStore {
    pub fn new(node_count: usize) -> Self {
        Self { pending: vec![Vec::new(); node_count] }
    }

    pub fn pending(&self, node: NodeId) -> &[RawMessage] {
        &self.pending[node]
    }

    pub fn has_pending(&self, node: NodeId) -> bool {
        !self.pending[node].is_empty()
    }

    pub fn push(&mut self, msg: RawMessage) {
        self.pending[msg.node].push(msg);
    }

    /// Removes and returns the node's pending messages.
    pub fn take(&mut self, node: NodeId) -> Vec<RawMessage> {
        std::mem::take(&mut self.pending[node])
    }

    pub fn total(&self) -> usize {
        self.pending.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    /// The most recent message.
    Last,
}

/// Aggregates message vectors (oldest first) into one.
pub fn aggregate_messages(msgs: &[Vec<f64>], mode: Aggregation) -> Result<Vec<f64>> {
    let first = msgs.first().ok_or_else(|| Error::InvalidArgument("no messages to aggregate".into()))?;
    if msgs.iter().any(|m| m.len() != first.len()) {
        return Err(Error::Shape("messages of different widths".into()));
    }
    Ok(match mode {
        Aggregation::Last => msgs[msgs.len() - 1].clone(),
        Aggregation::Mean => {
            let mut out = vec![0.0; first.len()];
            for m in msgs {
                for (o, v) in out.iter_mut().zip(m) {
                    *o += v;
                }
            }
            out.iter().map(|v| v / msgs.len() as f64).collect()
        }
    })
}

/// Batched aggregation on the tape: message row `r` belongs to node slot
/// `seg.ids()[r]`, rows of a slot in time order. Every slot must be non-empty.
pub fn aggregate_on_tape(tape: &mut Tape, msgs: Var, seg: &Segments, mode: Aggregation) -> Result<Var> {
    let sizes = seg.sizes();
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("no messages to aggregate".into()));
    }
    match mode {
        Aggregation::Mean => {
            let sum = tape.segment_sum(msgs, seg)?;
            let inv = tape.constant(Tensor::column(sizes.iter().map(|&s| 1.0 / s as f64).collect()));
            tape.mul_col(sum, inv)
        }
        Aggregation::Last => {
            let mut last = vec![0; seg.count()];
            for (r, &id) in seg.ids().iter().enumerate() {
                last[id] = r;
            }
            tape.gather_rows(msgs, last)
        }
    }
}

/// `s_i <- GRU(m̄, s_i)`, `t⁻_i <- t`, for one node outside any tape.
pub fn update_memory(bank: &mut MemoryBank, gru: &GruCell, store: &ParamStore, node: NodeId, msg: &[f64], t: f64) -> Result<Vec<f64>> {
    if node >= bank.node_count() {
        return Err(Error::UnknownNode(node));
    }
    if t < bank.last_update(node) {
        return Err(Error::TimeRegression { node, t, last: bank.last_update(node) });
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(msg.to_vec()));
    let h = tape.constant(Tensor::row(bank.get(node).to_vec()));
    let out = gru.forward(&mut tape, store, x, h)?;
    let value = tape.value(out).data().to_vec();
    bank.set(node, &value, t)?;
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolStep {
    /// Pending messages folded into memory.
    Flush,
    /// Memory read to compute an embedding.
    Infer,
    /// New raw message written.
    Store,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolRecord {
    pub batch: usize,
    pub node: NodeId,
    pub step: ProtocolStep,
}

/// Checks a recorded trace: within each batch, no node is flushed after it
/// is read, and no node receives a message before it is read (when it is
/// read at all). Also checks that every node read in a batch had no
/// messages left over from earlier batches.
pub fn verify_protocol(records: &[ProtocolRecord]) -> std::result::Result<(), String> {
    use std::collections::HashMap;
    let mut state: HashMap<(usize, NodeId), (bool, bool)> = HashMap::new();
    let mut stored_in: HashMap<NodeId, usize> = HashMap::new();
    let mut flushed_since: HashMap<NodeId, bool> = HashMap::new();
    for r in records {
        let (inferred, stored) = state.entry((r.batch, r.node)).or_default();
        match r.step {
            ProtocolStep::Flush => {
                if *inferred {
                    return Err(format!("batch {}: node {} flushed after inference", r.batch, r.node));
                }
                flushed_since.insert(r.node, true);
            }
            ProtocolStep::Infer => {
                if *stored {
                    return Err(format!("batch {}: node {} read after its new message was stored", r.batch, r.node));
                }
                if let Some(&b) = stored_in.get(&r.node) {
                    if b < r.batch && !flushed_since.get(&r.node).copied().unwrap_or(false) {
                        return Err(format!("batch {}: node {} read with unflushed messages from batch {b}", r.batch, r.node));
                    }
                }
                *inferred = true;
            }
            ProtocolStep::Store => {
                *stored = true;
                stored_in.insert(r.node, r.batch);
                flushed_since.insert(r.node, false);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn aggregation_modes() {
        let a = vec![1.0, 2.0];
        assert_eq!(aggregate_messages(&[a.clone()], Aggregation::Mean).unwrap(), a);
        assert_eq!(aggregate_messages(&[a.clone()], Aggregation::Last).unwrap(), a);
        let b = vec![3.0, -2.0];
        assert_eq!(aggregate_messages(&[a.clone(), b.clone()], Aggregation::Mean).unwrap(), vec![2.0, 0.0]);
        assert_eq!(aggregate_messages(&[a, b.clone()], Aggregation::Last).unwrap(), b);
        assert!(aggregate_messages(&[], Aggregation::Mean).is_err());
    }

    #[test]
    fn tape_aggregation_matches_plain() {
        let msgs = vec![vec![1.0, 0.0], vec![5.0, 2.0], vec![-1.0, 4.0], vec![0.5, 0.5]];
        let seg = Segments::new(vec![0, 1, 0, 0], 2).unwrap();
        for mode in [Aggregation::Mean, Aggregation::Last] {
            let mut tape = Tape::new();
            let m = tape.constant(Tensor::from_rows(&msgs).unwrap());
            let out = aggregate_on_tape(&mut tape, m, &seg, mode).unwrap();
            let want0 = aggregate_messages(&[msgs[0].clone(), msgs[2].clone(), msgs[3].clone()], mode).unwrap();
            assert_eq!(tape.value(out).row_slice(0), &want0[..]);
            assert_eq!(tape.value(out).row_slice(1), &msgs[1][..]);
        }
    }

    #[test]
    fn zero_weight_update_halves_memory() {
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in store.ids().collect::<Vec<_>>() {
            store.get_mut(p).value.data_mut().fill(0.0);
        }
        let mut bank = MemoryBank::new(2, 2, MemoryInit::Zeros, 0);
        bank.set(1, &[0.8, -0.4], 1.0).unwrap();
        let out = update_memory(&mut bank, &gru, &store, 1, &[1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(out, vec![0.4, -0.2]);
        assert_eq!(bank.last_update(1), 2.0);
        assert!(matches!(update_memory(&mut bank, &gru, &store, 1, &[0.0; 3], 1.5), Err(Error::TimeRegression { .. })));
    }

    #[test]
    fn gaussian_init_is_seeded() {
        let a = MemoryBank::new(5, 4, MemoryInit::Gaussian, 3);
        let b = MemoryBank::new(5, 4, MemoryInit::Gaussian, 3);
        let c = MemoryBank::new(5, 4, MemoryInit::Gaussian, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.elapsed(0, 7.0), 0.0);
    }

    #[test]
    fn protocol_verifier_catches_misordering() {
        let rec = |batch, node, step| ProtocolRecord { batch, node, step };
        let ok = [
            rec(0, 1, ProtocolStep::Infer),
            rec(0, 1, ProtocolStep::Store),
            rec(1, 1, ProtocolStep::Flush),
            rec(1, 1, ProtocolStep::Infer),
            rec(1, 1, ProtocolStep::Store),
        ];
        assert!(verify_protocol(&ok).is_ok());
        let late_flush = [rec(0, 1, ProtocolStep::Infer), rec(0, 1, ProtocolStep::Flush)];
        assert!(verify_protocol(&late_flush).is_err());
        let early_store = [rec(0, 1, ProtocolStep::Store), rec(0, 1, ProtocolStep::Infer)];
        assert!(verify_protocol(&early_store).is_err());
        let stale = [rec(0, 1, ProtocolStep::Store), rec(1, 1, ProtocolStep::Infer)];
        assert!(verify_protocol(&stale).is_err());
    }
}
