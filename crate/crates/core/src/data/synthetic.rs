//! Synthetic event streams with planted temporal motifs.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::graph::{EventLog, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motif {
    /// Repeat an earlier partner of a random node.
    Recurrence,
    /// Connect two recent partners of a common node.
    Triadic,
    Random,
}

impl std::str::FromStr for Motif {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recurrence" => Ok(Motif::Recurrence),
            "triadic" => Ok(Motif::Triadic),
            "random" => Ok(Motif::Random),
            _ => Err(Error::Config(format!("unknown motif {s:?} (recurrence, triadic, random)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub events: usize,
    pub motif: Motif,
    /// Probability that an event follows the motif rule.
    pub strength: f64,
    pub seed: u64,
}

/// Partners remembered per node for the triadic rule.
const RECENT: usize = 8;
const ATTEMPTS: usize = 32;

fn random_pair(n: usize, rng: &mut impl Rng) -> (NodeId, NodeId) {
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// Generates `spec.events` events with unit-rate exponential inter-arrival
/// times. Node ids are assigned in order of first appearance.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.nodes < 3 {
        return Err(Error::InvalidArgument("a synthetic graph needs at least 3 nodes".into()));
    }
    if !(0.0..=1.0).contains(&spec.strength) {
        return Err(Error::InvalidArgument(format!("motif strength {} outside [0, 1]", spec.strength)));
    }
    let n = spec.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut partners: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    let mut recent: Vec<VecDeque<NodeId>> = vec![VecDeque::new(); n];
    let mut active: Vec<NodeId> = Vec::new();
    let mut t = 0.0;
    let mut raw = Vec::with_capacity(spec.events);
    for _ in 0..spec.events {
        let motif = spec.motif != Motif::Random && rng.gen::<f64>() < spec.strength;
        let mut pair = None;
        if motif && !active.is_empty() {
            for _ in 0..ATTEMPTS {
                let w = active[rng.gen_range(0..active.len())];
                match spec.motif {
                    Motif::Recurrence => {
                        let p = &partners[w];
                        pair = Some((w, p[rng.gen_range(0..p.len())]));
                    }
                    Motif::Triadic => {
                        let r = &recent[w];
                        if r.len() >= 2 {
                            let a = rng.gen_range(0..r.len());
                            let mut b = rng.gen_range(0..r.len() - 1);
                            if b >= a {
                                b += 1;
                            }
                            if r[a] != r[b] {
                                pair = Some((r[a], r[b]));
                            }
                        }
                    }
                    Motif::Random => {}
                }
                if pair.is_some() {
                    break;
                }
            }
        }
        let (u, v) = pair.unwrap_or_else(|| random_pair(n, &mut rng));
        let gap: f64 = rng.sample(Exp1);
        t += gap;
        raw.push((u, v, t));
        for (a, b) in [(u, v), (v, u)] {
            if partners[a].is_empty() {
                active.push(a);
            }
            if !partners[a].contains(&b) {
                partners[a].push(b);
            }
            let r = &mut recent[a];
            if let Some(pos) = r.iter().position(|&x| x == b) {
                r.remove(pos);
            }
            r.push_back(b);
            if r.len() > RECENT {
                r.pop_front();
            }
        }
    }
    // Relabel by first appearance so a written and re-read file maps back
    // onto the same ids.
    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    for &(u, v, _) in &raw {
        for x in [u, v] {
            if relabel[x] == usize::MAX {
                relabel[x] = next;
                next += 1;
            }
        }
    }
    for r in relabel.iter_mut().filter(|r| **r == usize::MAX) {
        *r = next;
        next += 1;
    }
    let raw = raw.into_iter().map(|(u, v, t)| (relabel[u], relabel[v], t)).collect();
    let log = EventLog::new(n, 0, raw, Vec::new())?;
    let name = format!("synthetic-{:?}-{}", spec.motif, spec.seed).to_lowercase();
    Ok(Dataset::from_log(name, log, false))
}

/// Fraction of events, after the first `warmup`, whose endpoints share a
/// partner among each other's last `window` distinct partners.
pub fn wedge_closure_rate(log: &EventLog, warmup: usize, window: usize) -> f64 {
    let mut recent: Vec<VecDeque<NodeId>> = vec![VecDeque::new(); log.node_count()];
    let (mut closed, mut counted) = (0usize, 0usize);
    for (k, e) in log.events().iter().enumerate() {
        if k >= warmup {
            counted += 1;
            if recent[e.src].iter().any(|w| *w != e.dst && recent[e.dst].contains(w)) {
                closed += 1;
            }
        }
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            let r = &mut recent[a];
            if let Some(pos) = r.iter().position(|&x| x == b) {
                r.remove(pos);
            }
            r.push_back(b);
            if r.len() > window {
                r.pop_front();
            }
        }
    }
    if counted == 0 {
        0.0
    } else {
        closed as f64 / counted as f64
    }
}
