//! Samples time-inverse walks from a small temporal graph and prints the
//! positional-frequency table that replaces node identities.

use nef_tgn::graph::{EventLog, NodeFeatures, TemporalGraph};
use nef_tgn::nef::{anonymize, positional_frequency};
use nef_tgn::walk::{sample_walk_set, StreamKey, WalkConfig};

fn main() -> nef_tgn::Result<()> {
    // A triangle 0-1-2 that keeps firing, plus a pendant node 3.
    let raw = vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0), (2, 3, 4.0), (0, 1, 5.0), (1, 2, 6.0)];
    let log = EventLog::new(4, 0, raw, Vec::new())?;
    let graph = TemporalGraph::build(log, NodeFeatures::empty())?;

    let cfg = WalkConfig { walks_per_node: 4, length: 3, alpha: 0.5, seed: 7 };
    let t = 7.0;
    let s0 = sample_walk_set(&graph, 0, t, &cfg, StreamKey { query: 0, side: 0 })?;
    let s2 = sample_walk_set(&graph, 2, t, &cfg, StreamKey { query: 0, side: 1 })?;

    println!("walks from node 0 at t={t}:");
    for w in &s0.walks {
        let path: Vec<String> = w
            .steps
            .iter()
            .map(|s| if s.padded { "-".to_string() } else { format!("{}@{}", s.node, s.t) })
            .collect();
        println!("  {}", path.join(" <- "));
    }
    for node in 0..4 {
        println!("g({node}, S_0) = {:?}   g({node}, S_2) = {:?}", positional_frequency(node, &s0), positional_frequency(node, &s2));
    }

    let pair = anonymize(&graph, &s0, &s2)?;
    let first = &pair.walks_i[0];
    println!("first anonymized walk of node 0:");
    for (m, step) in first.iter().enumerate() {
        println!("  pos {m}: own {:?} other {:?} dt {:.2} padded {}", step.own, step.other, step.dt, step.padded);
    }
    Ok(())
}
