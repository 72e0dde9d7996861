//! Continuous-time dynamic graph storage: the chronological event log,
//! static node features, and a per-node time index for "strictly before t"
//! neighborhood queries.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One timestamped interaction. `id` is the event's ordinal in the
/// chronological order of the log it was loaded into; it stays attached to
/// the event when the log is filtered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub id: usize,
}

/// Time-sorted event stream. Edge features are stored once, indexed by
/// event id, and shared between filtered views.
#[derive(Clone, Debug)]
pub struct EventLog {
    events: Vec<Event>,
    node_count: usize,
    edge_dim: usize,
    features: Arc<Vec<f64>>,
}

impl EventLog {
    /// Builds a log from events already in chronological order.
    /// `features` holds `edge_dim` values per event, in the same order.
    pub fn new(node_count: usize, edge_dim: usize, raw: Vec<(NodeId, NodeId, f64)>, features: Vec<f64>) -> Result<Self> {
        if features.len() != raw.len() * edge_dim {
            return Err(Error::InvalidEvents(format!(
                "{} feature values for {} events of width {edge_dim}",
                features.len(),
                raw.len()
            )));
        }
        let mut events = Vec::with_capacity(raw.len());
        let mut last = f64::NEG_INFINITY;
        for (id, (src, dst, t)) in raw.into_iter().enumerate() {
            if src >= node_count || dst >= node_count {
                return Err(Error::InvalidEvents(format!(
                    "event {id} references node {} but node_count is {node_count}",
                    src.max(dst)
                )));
            }
            if !t.is_finite() {
                return Err(Error::InvalidEvents(format!("event {id} has non-finite timestamp")));
            }
            if t < last {
                return Err(Error::InvalidEvents(format!("event {id} at t={t} precedes t={last}")));
            }
            last = t;
            events.push(Event { src, dst, t, id });
        }
        Ok(Self { events, node_count, edge_dim, features: Arc::new(features) })
    }

    /// Like [`EventLog::new`] but stably sorts by timestamp first, so equal
    /// timestamps keep their input order.
    pub fn from_unsorted(node_count: usize, edge_dim: usize, raw: Vec<(NodeId, NodeId, f64)>, features: Vec<f64>) -> Result<Self> {
        if features.len() != raw.len() * edge_dim {
            return Err(Error::InvalidEvents("feature count does not match events".into()));
        }
        if raw.iter().any(|r| r.2.is_nan()) {
            return Err(Error::InvalidEvents("NaN timestamp".into()));
        }
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[a].2.total_cmp(&raw[b].2));
        let sorted = order.iter().map(|&i| raw[i]).collect();
        let mut feats = Vec::with_capacity(features.len());
        for &i in &order {
            feats.extend_from_slice(&features[i * edge_dim..(i + 1) * edge_dim]);
        }
        Self::new(node_count, edge_dim, sorted, feats)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    /// Edge features of the event with the given id.
    pub fn features(&self, event_id: usize) -> &[f64] {
        &self.features[event_id * self.edge_dim..(event_id + 1) * self.edge_dim]
    }

    pub fn t_max(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }

    /// Events with `t < cutoff`.
    pub fn snapshot_before(&self, cutoff: f64) -> EventLog {
        let n = self.events.partition_point(|e| e.t < cutoff);
        self.with_events(self.events[..n].to_vec())
    }

    /// Keeps events matching `keep`, preserving order and ids.
    pub fn filter(&self, mut keep: impl FnMut(&Event) -> bool) -> EventLog {
        self.with_events(self.events.iter().filter(|e| keep(e)).copied().collect())
    }

    /// A log over `events` (which must be drawn from this log, in order).
    pub fn with_events(&self, events: Vec<Event>) -> EventLog {
        Self { events, node_count: self.node_count, edge_dim: self.edge_dim, features: Arc::clone(&self.features) }
    }

    /// Concatenation of two chronologically adjacent views of the same log.
    pub fn chain(&self, later: &EventLog) -> EventLog {
        let mut events = self.events.clone();
        events.extend_from_slice(&later.events);
        self.with_events(events)
    }
}

/// Static `|V| × k` node attribute matrix (`k` may be 0).
#[derive(Clone, Debug)]
pub struct NodeFeatures {
    dim: usize,
    values: Arc<Vec<f64>>,
}

impl NodeFeatures {
    pub fn new(node_count: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != node_count * dim {
            return Err(Error::InvalidArgument(format!(
                "{} node feature values for {node_count} nodes of width {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values: Arc::new(values) })
    }

    /// No node attributes (`k = 0`).
    pub fn empty() -> Self {
        Self { dim: 0, values: Arc::new(Vec::new()) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, node: NodeId) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// Applies a node relabeling: row `perm[v]` of the result is row `v`.
    pub fn permuted(&self, perm: &[NodeId]) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for (v, &pv) in perm.iter().enumerate() {
            values[pv * self.dim..(pv + 1) * self.dim].copy_from_slice(self.get(v));
        }
        Self { dim: self.dim, values: Arc::new(values) }
    }
}

/// One endpoint's view of an event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub t: f64,
    pub event_id: usize,
    /// `true` when the owning node was the event's source.
    pub outgoing: bool,
}

/// The event log, node features and per-node time-sorted incidence lists.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    log: EventLog,
    node_features: NodeFeatures,
    offsets: Vec<usize>,
    entries: Vec<AdjEntry>,
}

impl TemporalGraph {
    pub fn build(log: EventLog, node_features: NodeFeatures) -> Result<Self> {
        let n = log.node_count();
        if node_features.dim() > 0 && node_features.values.len() != n * node_features.dim() {
            return Err(Error::InvalidArgument("node features do not cover every node".into()));
        }
        let mut degree = vec![0usize; n];
        let mut last = f64::NEG_INFINITY;
        for e in log.events() {
            if e.src >= n || e.dst >= n {
                return Err(Error::UnknownNode(e.src.max(e.dst)));
            }
            if e.t < last {
                return Err(Error::InvalidEvents(format!("event {} goes back in time", e.id)));
            }
            last = e.t;
            degree[e.src] += 1;
            degree[e.dst] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let placeholder = AdjEntry { neighbor: 0, t: 0.0, event_id: 0, outgoing: false };
        let mut entries = vec![placeholder; offsets[n]];
        for e in log.events() {
            entries[fill[e.src]] = AdjEntry { neighbor: e.dst, t: e.t, event_id: e.id, outgoing: true };
            fill[e.src] += 1;
            entries[fill[e.dst]] = AdjEntry { neighbor: e.src, t: e.t, event_id: e.id, outgoing: false };
            fill[e.dst] += 1;
        }
        Ok(Self { log, node_features, offsets, entries })
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn node_features(&self) -> &NodeFeatures {
        &self.node_features
    }

    pub fn node_count(&self) -> usize {
        self.log.node_count()
    }

    pub fn edge_dim(&self) -> usize {
        self.log.edge_dim()
    }

    pub fn edge_features(&self, event_id: usize) -> &[f64] {
        self.log.features(event_id)
    }

    fn check(&self, node: NodeId) -> Result<()> {
        if node >= self.node_count() {
            return Err(Error::UnknownNode(node));
        }
        Ok(())
    }

    /// The full incidence list of `node`, oldest first.
    pub fn history(&self, node: NodeId) -> Result<&[AdjEntry]> {
        self.check(node)?;
        Ok(&self.entries[self.offsets[node]..self.offsets[node + 1]])
    }

    /// Every incidence of `node` with timestamp strictly below `t`, oldest first.
    pub fn history_before(&self, node: NodeId, t: f64) -> Result<&[AdjEntry]> {
        let all = self.history(node)?;
        Ok(&all[..all.partition_point(|a| a.t < t)])
    }

    /// The `count` most recent incidences of `node` strictly before `t`,
    /// newest last.
    pub fn neighbors_before(&self, node: NodeId, t: f64, count: usize) -> Result<&[AdjEntry]> {
        if count == 0 {
            return Err(Error::InvalidArgument("neighbor count must be at least 1".into()));
        }
        let before = self.history_before(node, t)?;
        Ok(&before[before.len().saturating_sub(count)..])
    }

    /// Up to `count` distinct neighbors of `node` before `t`, each with its
    /// most recent incidence; most recent neighbor last.
    pub fn distinct_neighbors_before(&self, node: NodeId, t: f64, count: usize) -> Result<Vec<AdjEntry>> {
        let before = self.history_before(node, t)?;
        let mut out: Vec<AdjEntry> = Vec::with_capacity(count);
        for a in before.iter().rev() {
            if out.len() == count {
                break;
            }
            if !out.iter().any(|o| o.neighbor == a.neighbor) {
                out.push(*a);
            }
        }
        out.reverse();
        Ok(out)
    }

    /// Nodes reachable from `node` in at most `k` undirected hops over
    /// events strictly before `t`, excluding `node` itself.
    pub fn khop_neighborhood(&self, node: NodeId, t: f64, k: usize) -> Result<BTreeSet<NodeId>> {
        self.check(node)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut seen = BTreeSet::from([node]);
        let mut frontier = vec![node];
        for _ in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for a in self.history_before(u, t)? {
                    if seen.insert(a.neighbor) {
                        next.push(a.neighbor);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen.remove(&node);
        Ok(seen)
    }

    /// Mean gap between consecutive distinct event times (0 if undefined).
    pub fn mean_interevent_time(&self) -> f64 {
        let ev = self.log.events();
        if ev.len() < 2 {
            return 0.0;
        }
        (ev[ev.len() - 1].t - ev[0].t) / (ev.len() - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, raw: &[(usize, usize, f64)]) -> TemporalGraph {
        let log = EventLog::new(n, 0, raw.to_vec(), vec![]).unwrap();
        TemporalGraph::build(log, NodeFeatures::empty()).unwrap()
    }

    #[test]
    fn empty_log_has_empty_lists() {
        let g = graph(3, &[]);
        for v in 0..3 {
            assert!(g.history(v).unwrap().is_empty());
        }
    }

    #[test]
    fn single_event_is_listed_at_both_endpoints() {
        let g = graph(2, &[(0, 1, 5.0)]);
        assert_eq!(g.history(0).unwrap(), &[AdjEntry { neighbor: 1, t: 5.0, event_id: 0, outgoing: true }]);
        assert_eq!(g.history(1).unwrap(), &[AdjEntry { neighbor: 0, t: 5.0, event_id: 0, outgoing: false }]);
    }

    #[test]
    fn neighbors_before_is_strict() {
        let g = graph(2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        let got: Vec<f64> = g.neighbors_before(0, 3.0, 5).unwrap().iter().map(|a| a.t).collect();
        assert_eq!(got, vec![1.0, 2.0]);
        let last: Vec<f64> = g.neighbors_before(0, 10.0, 2).unwrap().iter().map(|a| a.t).collect();
        assert_eq!(last, vec![2.0, 3.0]);
        assert!(g.neighbors_before(0, 1.0, 3).unwrap().is_empty());
        assert!(g.neighbors_before(5, 1.0, 3).is_err());
        assert!(g.neighbors_before(0, 1.0, 0).is_err());
    }

    #[test]
    fn log_validation() {
        assert!(EventLog::new(2, 0, vec![(0, 2, 1.0)], vec![]).is_err());
        assert!(EventLog::new(2, 0, vec![(0, 1, 2.0), (1, 0, 1.0)], vec![]).is_err());
        assert!(EventLog::new(2, 1, vec![(0, 1, 2.0)], vec![]).is_err());
        let log = EventLog::from_unsorted(2, 1, vec![(0, 1, 2.0), (1, 0, 1.0), (0, 0, 1.0)], vec![7.0, 8.0, 9.0]).unwrap();
        let order: Vec<_> = log.events().iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(order, vec![(1, 0), (0, 0), (0, 1)]);
        assert_eq!(log.features(0), &[8.0]);
        assert_eq!(log.features(2), &[7.0]);
    }

    #[test]
    fn self_loop_appears_twice_in_own_list() {
        let g = graph(1, &[(0, 0, 1.0)]);
        assert_eq!(g.history(0).unwrap().len(), 2);
    }

    #[test]
    fn khop_star_and_isolated() {
        let g = graph(5, &[(0, 1, 1.0), (2, 0, 2.0), (0, 3, 3.0)]);
        assert_eq!(g.khop_neighborhood(0, 3.0, 1).unwrap(), BTreeSet::from([1, 2]));
        assert_eq!(g.khop_neighborhood(0, 4.0, 1).unwrap(), BTreeSet::from([1, 2, 3]));
        assert!(g.khop_neighborhood(4, 4.0, 2).unwrap().is_empty());
        assert_eq!(g.khop_neighborhood(1, 4.0, 2).unwrap(), BTreeSet::from([0, 2, 3]));
    }

    #[test]
    fn snapshot_before_bounds() {
        let g = graph(2, &[(0, 1, 1.0), (0, 1, 2.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert!(g.log().snapshot_before(0.0).is_empty());
        assert_eq!(g.log().snapshot_before(100.0).len(), 4);
        assert_eq!(g.log().snapshot_before(2.0).len(), 1);
    }
}
