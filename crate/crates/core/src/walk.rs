//! Time-inverse walks with exponential recency bias.
//!
//! From the current node at time `t_cur`, the next step is drawn among all
//! of the node's events strictly before `t_cur` with probability
//! proportional to `exp(alpha * (t_event - t_cur))`. Walks that run out of
//! history are padded to a fixed length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkConfig {
    /// Walks sampled per endpoint (`K`).
    pub walks_per_node: usize,
    /// Steps per walk (`M`); a walk holds `M + 1` positions.
    pub length: usize,
    /// Recency decay rate per unit time.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { walks_per_node: 32, length: 2, alpha: 0.0, seed: 0 }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node < 2 {
            return Err(Error::InvalidArgument("walks_per_node must be > 1".into()));
        }
        if self.length < 1 {
            return Err(Error::InvalidArgument("walk length must be >= 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Decay matched to the graph's time scale: `4 / mean inter-event gap`.
    pub fn auto_alpha(graph: &TemporalGraph) -> f64 {
        let gap = graph.mean_interevent_time();
        if gap > 0.0 {
            4.0 / gap
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkStep {
    pub node: NodeId,
    pub t: f64,
    /// Event traversed to reach this position (`None` at the origin and on pads).
    pub event_id: Option<usize>,
    pub padded: bool,
}

/// A walk of `M + 1` positions with strictly decreasing times over its
/// unpadded prefix; position 0 is the start node at the query time.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub steps: Vec<WalkStep>,
}

impl Walk {
    pub fn origin_t(&self) -> f64 {
        self.steps[0].t
    }

    pub fn real_len(&self) -> usize {
        self.steps.iter().filter(|s| !s.padded).count()
    }

    /// Non-negative time gap between position `m` and the one before it
    /// (zero at the origin and on pads).
    pub fn dt(&self, m: usize) -> f64 {
        if m == 0 || self.steps[m].padded {
            0.0
        } else {
            self.steps[m - 1].t - self.steps[m].t
        }
    }
}

/// `K` walks from one node, all sharing the origin time.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkSet {
    pub owner: NodeId,
    pub origin_t: f64,
    pub walks: Vec<Walk>,
}

/// Identifies an independent random substream. Keys are chosen by callers
/// from quantities that do not depend on node labels (event ordinals,
/// query positions), so relabeling nodes leaves sampled walk shapes intact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub query: u64,
    pub side: u64,
}

pub fn substream(seed: u64, key: StreamKey, walk: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.query.to_le_bytes());
    bytes[16..24].copy_from_slice(&key.side.to_le_bytes());
    bytes[24..].copy_from_slice(&walk.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Samples one time-inverse walk of `cfg.length` steps from `start` at `t`.
pub fn sample_walk(graph: &TemporalGraph, start: NodeId, t: f64, cfg: &WalkConfig, rng: &mut impl Rng) -> Result<Walk> {
    graph.history(start)?;
    let mut steps = Vec::with_capacity(cfg.length + 1);
    steps.push(WalkStep { node: start, t, event_id: None, padded: false });
    let mut weights = Vec::new();
    for _ in 0..cfg.length {
        let cur = *steps.last().unwrap();
        let candidates = if cur.padded { &[][..] } else { graph.history_before(cur.node, cur.t)? };
        if candidates.is_empty() {
            steps.push(WalkStep { padded: true, event_id: None, ..cur });
            continue;
        }
        // Candidates are time-sorted, so the last one carries the largest weight.
        let newest = candidates[candidates.len() - 1].t;
        weights.clear();
        weights.extend(candidates.iter().map(|a| (cfg.alpha * (a.t - newest)).exp()));
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = candidates.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        let a = candidates[pick];
        steps.push(WalkStep { node: a.neighbor, t: a.t, event_id: Some(a.event_id), padded: false });
    }
    Ok(Walk { steps })
}

/// Samples `cfg.walks_per_node` walks, walk `k` drawn from substream
/// `(cfg.seed, key, k)`.
pub fn sample_walk_set(graph: &TemporalGraph, node: NodeId, t: f64, cfg: &WalkConfig, key: StreamKey) -> Result<WalkSet> {
    let walks = (0..cfg.walks_per_node)
        .map(|k| sample_walk(graph, node, t, cfg, &mut substream(cfg.seed, key, k as u64)))
        .collect::<Result<_>>()?;
    Ok(WalkSet { owner: node, origin_t: t, walks })
}
