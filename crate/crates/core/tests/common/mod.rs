#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nef_tgn::graph::{EventLog, NodeFeatures, TemporalGraph};
use nef_tgn::nef::NefConfig;
use nef_tgn::tgn::{ModelConfig, Toggles};
use nef_tgn::walk::WalkConfig;

/// Random log over `nodes` nodes with distinct increasing timestamps and
/// optional node and edge attributes.
pub fn random_log(nodes: usize, events: usize, node_dim: usize, edge_dim: usize, seed: u64) -> (EventLog, NodeFeatures) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut raw = Vec::with_capacity(events);
    for _ in 0..events {
        t += rng.gen_range(0.1..1.0);
        let u = rng.gen_range(0..nodes);
        let mut v = rng.gen_range(0..nodes - 1);
        if v >= u {
            v += 1;
        }
        raw.push((u, v, t));
    }
    let feats = (0..events * edge_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let log = EventLog::new(nodes, edge_dim, raw, feats).unwrap();
    let nf = if node_dim == 0 {
        NodeFeatures::empty()
    } else {
        NodeFeatures::new(nodes, node_dim, (0..nodes * node_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    (log, nf)
}

pub fn graph(log: &EventLog, nf: &NodeFeatures) -> TemporalGraph {
    TemporalGraph::build(log.clone(), nf.clone()).unwrap()
}

pub fn small_nef() -> NefConfig {
    NefConfig {
        walk: WalkConfig { walks_per_node: 4, length: 2, alpha: 0.3, seed: 11 },
        pos_dim: 4,
        time_dim: 4,
        rnn_hidden: 3,
        ..NefConfig::default()
    }
}

/// A narrow model with the given toggles; dropout off so outputs are
/// comparable across calls.
pub fn small_model(toggles: Toggles, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig { mem_dim: 6, emb_dim: 6, time_dim: 4, neighbors: 4, nef: small_nef(), dropout: 0.0, seed, ..ModelConfig::default() };
    toggles.apply(&mut cfg);
    cfg
}
