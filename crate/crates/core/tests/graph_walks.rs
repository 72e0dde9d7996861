mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use nef_tgn::graph::{EventLog, NodeFeatures, TemporalGraph};
use nef_tgn::walk::{sample_walk, sample_walk_set, StreamKey, WalkConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn history_is_strictly_before_query(seed in 0u64..1000, nodes in 3usize..12, events in 1usize..60, frac in 0.0f64..1.2) {
        let (log, nf) = common::random_log(nodes, events, 0, 0, seed);
        let g = common::graph(&log, &nf);
        let t = frac * log.t_max().unwrap();
        for n in 0..nodes {
            for a in g.history_before(n, t).unwrap() {
                prop_assert!(a.t < t);
            }
            for a in g.neighbors_before(n, t, 3).unwrap() {
                prop_assert!(a.t < t);
            }
        }
    }

    #[test]
    fn adjacency_lengths_sum_to_twice_the_events(seed in 0u64..1000, nodes in 2usize..15, events in 0usize..80) {
        let (log, nf) = if events == 0 {
            (EventLog::new(nodes, 0, vec![], vec![]).unwrap(), NodeFeatures::empty())
        } else {
            common::random_log(nodes, events, 0, 0, seed)
        };
        let g = common::graph(&log, &nf);
        let total: usize = (0..nodes).map(|n| g.history(n).unwrap().len()).sum();
        prop_assert_eq!(total, 2 * events);
    }

    #[test]
    fn neighbor_queries_do_not_depend_on_order(seed in 0u64..1000, nodes in 3usize..10) {
        let (log, nf) = common::random_log(nodes, 40, 0, 0, seed);
        let g = common::graph(&log, &nf);
        let t = log.t_max().unwrap() * 0.7;
        let forward: Vec<_> = (0..nodes).map(|n| g.distinct_neighbors_before(n, t, 3).unwrap()).collect();
        let mut backward: Vec<_> = (0..nodes).rev().map(|n| g.distinct_neighbors_before(n, t, 3).unwrap()).collect();
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn walk_transitions_are_real_earlier_events(seed in 0u64..1000, len in 1usize..5, alpha in 0.0f64..2.0) {
        let (log, nf) = common::random_log(8, 50, 0, 0, seed);
        let g = common::graph(&log, &nf);
        let t = log.t_max().unwrap() * 0.8;
        let cfg = WalkConfig { walks_per_node: 6, length: len, alpha, seed };
        for n in 0..8 {
            let set = sample_walk_set(&g, n, t, &cfg, StreamKey { query: n as u64, side: 0 }).unwrap();
            for w in &set.walks {
                prop_assert_eq!(w.steps.len(), len + 1);
                for m in 1..w.steps.len() {
                    let (prev, cur) = (w.steps[m - 1], w.steps[m]);
                    if cur.padded {
                        prop_assert!(w.steps[m..].iter().all(|s| s.padded));
                        break;
                    }
                    let e = log.events()[cur.event_id.unwrap()];
                    prop_assert!(e.t < prev.t && e.t < t);
                    prop_assert_eq!(e.t, cur.t);
                    prop_assert!((e.src, e.dst) == (prev.node, cur.node) || (e.dst, e.src) == (prev.node, cur.node));
                }
            }
        }
    }
}

#[test]
fn walks_ignore_events_at_or_after_the_origin() {
    let (log, nf) = common::random_log(6, 30, 0, 0, 5);
    let cut = log.events()[20].t;
    let before = common::graph(&log.snapshot_before(cut), &nf);
    let full = common::graph(&log, &nf);
    let cfg = WalkConfig { walks_per_node: 8, length: 3, alpha: 0.5, seed: 1 };
    for n in 0..6 {
        let key = StreamKey { query: 3, side: 1 };
        assert_eq!(sample_walk_set(&before, n, cut, &cfg, key).unwrap(), sample_walk_set(&full, n, cut, &cfg, key).unwrap());
    }
}

/// First-step choice over a star with known gaps follows
/// `exp(-alpha * (t - t_e)) / sum` (chi-square goodness of fit).
#[test]
fn first_step_follows_exponential_recency_weights() {
    let times = [1.0, 2.0, 2.5, 4.0, 4.2, 6.0];
    let raw: Vec<(usize, usize, f64)> = times.iter().enumerate().map(|(k, &t)| (0, k + 1, t)).collect();
    let g = TemporalGraph::build(EventLog::new(7, 0, raw, vec![]).unwrap(), NodeFeatures::empty()).unwrap();
    let (t, alpha) = (7.0, 0.6);
    let cfg = WalkConfig { walks_per_node: 1, length: 1, alpha, seed: 0 };
    let draws = 100_000;
    let mut counts = [0usize; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..draws {
        let w = sample_walk(&g, 0, t, &cfg, &mut rng).unwrap();
        counts[w.steps[1].node - 1] += 1;
    }
    let raw_w: Vec<f64> = times.iter().map(|&te| (-alpha * (t - te)).exp()).collect();
    let z: f64 = raw_w.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&raw_w)
        .map(|(&c, &w)| {
            let expected = draws as f64 * w / z;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let p = 1.0 - ChiSquared::new(5.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.2}, p {p:.4}, counts {counts:?}");
}

#[test]
fn zero_decay_is_uniform_over_candidates() {
    let raw = vec![(0, 1, 1.0), (0, 2, 50.0), (0, 3, 99.0)];
    let g = TemporalGraph::build(EventLog::new(4, 0, raw, vec![]).unwrap(), NodeFeatures::empty()).unwrap();
    let cfg = WalkConfig { walks_per_node: 1, length: 1, alpha: 0.0, seed: 0 };
    let mut counts = [0usize; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 30_000;
    for _ in 0..draws {
        counts[sample_walk(&g, 0, 100.0, &cfg, &mut rng).unwrap().steps[1].node - 1] += 1;
    }
    let expected = draws as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2) > 0.01, "{counts:?}");
}
