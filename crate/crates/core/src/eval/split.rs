//! Chronological splits and node/edge masking.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EventLog, NodeId};

/// Contiguous train/validation/test views of one log.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: EventLog,
    pub val: EventLog,
    pub test: EventLog,
}

/// Splits by event count into a prefix, an infix and a suffix.
pub fn chrono_split(log: &EventLog, fractions: [f64; 3]) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = log.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_train_val = (((fractions[0] + fractions[1]) * n as f64).round() as usize).clamp(n_train, n);
    let sizes = [n_train, n_train_val - n_train, n - n_train_val];
    for (part, (&size, &f)) in ["train", "validation", "test"].iter().zip(sizes.iter().zip(&fractions)) {
        if f > 0.0 && size == 0 {
            return Err(Error::InvalidArgument(format!("{n} events leave the {part} split empty")));
        }
    }
    let ev = log.events();
    Ok(Split {
        train: log.with_events(ev[..n_train].to_vec()),
        val: log.with_events(ev[n_train..n_train_val].to_vec()),
        test: log.with_events(ev[n_train_val..].to_vec()),
    })
}

/// Named mask strengths.
pub const LEAN: f64 = 0.10;
pub const STRICT: f64 = 0.75;

/// Parses `"lean"`, `"strict"`, a percentage (`"75%"`) or a fraction.
pub fn parse_mask_fraction(s: &str) -> Result<f64> {
    let t = s.trim().to_ascii_lowercase();
    let v = match t.as_str() {
        "lean" => LEAN,
        "strict" => STRICT,
        _ => match t.strip_suffix('%') {
            Some(p) => p.trim().parse::<f64>().map(|v| v / 100.0),
            None => t.parse::<f64>(),
        }
        .map_err(|_| Error::Config(format!("cannot parse mask fraction {s:?}")))?,
    };
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Config(format!("mask fraction {v} outside [0, 1)")));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub node_frac: f64,
    pub edge_frac: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self { node_frac: 0.0, edge_frac: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        for f in [self.node_frac, self.edge_frac] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!("mask fraction {f} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Nodes that occur as an endpoint in `log`.
pub fn active_nodes(log: &EventLog) -> BTreeSet<NodeId> {
    log.events().iter().flat_map(|e| [e.src, e.dst]).collect()
}

/// Samples `round(frac · |universe|)` nodes and drops every training event
/// touching one of them.
pub fn apply_node_mask(train: &EventLog, universe: &BTreeSet<NodeId>, frac: f64, seed: u64) -> Result<(EventLog, BTreeSet<NodeId>)> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!("mask fraction {frac} outside [0, 1)")));
    }
    if frac == 0.0 {
        return Ok((train.clone(), BTreeSet::new()));
    }
    let nodes: Vec<NodeId> = universe.iter().copied().collect();
    let k = (frac * nodes.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked: BTreeSet<NodeId> = sample(&mut rng, nodes.len(), k).into_iter().map(|i| nodes[i]).collect();
    let kept = train.filter(|e| !masked.contains(&e.src) && !masked.contains(&e.dst));
    if kept.is_empty() && !train.is_empty() {
        return Err(Error::InvalidArgument("node mask removes every training event".into()));
    }
    Ok((kept, masked))
}

/// Drops `round(frac · |train|)` uniformly chosen training events.
pub fn apply_edge_mask(train: &EventLog, frac: f64, seed: u64) -> Result<EventLog> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!("mask fraction {frac} outside [0, 1)")));
    }
    if frac == 0.0 {
        return Ok(train.clone());
    }
    let n = train.len();
    let drop = (frac * n as f64).round() as usize;
    if drop >= n && n > 0 {
        return Err(Error::InvalidArgument("edge mask removes every training event".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed: BTreeSet<usize> = sample(&mut rng, n, drop).into_iter().collect();
    let kept = train.events().iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, e)| *e).collect();
    Ok(train.with_events(kept))
}
