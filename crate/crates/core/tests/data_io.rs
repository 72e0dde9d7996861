mod common;

use std::io::Write;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use nef_tgn::data::{
    export_embeddings, generate_synthetic, load_event_csv, mapping_path, read_id_mapping, wedge_closure_rate, write_event_csv, write_id_mapping,
    ColumnMapping, Dataset, Motif, SyntheticSpec,
};
use nef_tgn::eval::mean_std;
use nef_tgn::graph::EventLog;
use nef_tgn::tgn::{nef_key, role, EmbeddingQuery, TgnModel, Toggles};

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn write_then_load_reproduces_the_log(seed in 0u64..5000, nodes in 3usize..20, events in 1usize..80, edge_dim in 0usize..3) {
        let (log, _) = common::random_log(nodes, events, 0, edge_dim, seed);
        // Force some timestamp ties.
        let raw: Vec<_> = log.events().iter().map(|e| (e.src, e.dst, (e.t * 2.0).floor() / 2.0)).collect();
        let feats: Vec<f64> = log.events().iter().flat_map(|e| log.features(e.id).to_vec()).collect();
        let log = EventLog::new(nodes, edge_dim, raw, feats).unwrap();
        let mut ds = Dataset::from_log("p", log, false);
        ds.labels = (0..ds.log.len()).map(|i| (i % 3 == 0).then_some((i % 2) as i64)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        write_event_csv(&path, &ds).unwrap();
        let back = load_event_csv(&path, &ColumnMapping::interactions(), false).unwrap();
        prop_assert_eq!(back.log.len(), ds.log.len());
        let index = back.node_index();
        for (a, b) in ds.log.events().iter().zip(back.log.events()) {
            prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
            prop_assert_eq!(index[ds.node_ids[a.src].as_str()], b.src);
            prop_assert_eq!(index[ds.node_ids[a.dst].as_str()], b.dst);
            prop_assert_eq!(ds.log.features(a.id), back.log.features(b.id));
            prop_assert_eq!(ds.labels[a.id], back.labels[b.id]);
        }
        // The persisted id mapping inverts the remapping exactly.
        write_id_mapping(&mapping_path(&path), &back).unwrap();
        let ids = read_id_mapping(&mapping_path(&path)).unwrap();
        prop_assert_eq!(&ids, &back.node_ids);
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), ids.len());
    }
}

#[test]
fn equal_timestamps_keep_file_order_after_resorting() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "ties.csv", "u,i,ts,label\na,b,5,0\nc,d,1,0\ne,f,5,1\ng,h,5,0\ni,j,1,0\n");
    let ds = load_event_csv(&p, &ColumnMapping::interactions(), false).unwrap();
    let order: Vec<(&str, f64)> = ds.log.events().iter().map(|e| (ds.node_ids[e.src].as_str(), e.t)).collect();
    assert_eq!(order, vec![("c", 1.0), ("i", 1.0), ("a", 5.0), ("e", 5.0), ("g", 5.0)]);
    assert!(ds.log.events().iter().enumerate().all(|(k, e)| e.id == k));
    assert_eq!(ds.labels[3], Some(1));
}

#[test]
fn bipartite_ids_keep_sides_apart_and_mapping_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "bi.csv", "u,i,ts,label,f\n1,1,0.5,0,0.1\n2,1,1.5,0,0.2\n1,3,2.5,0,0.3\n");
    let ds = load_event_csv(&p, &ColumnMapping::interactions(), true).unwrap();
    assert_eq!(ds.log.node_count(), 4);
    let srcs: Vec<usize> = ds.log.events().iter().map(|e| e.src).collect();
    let dsts: Vec<usize> = ds.log.events().iter().map(|e| e.dst).collect();
    assert!(srcs.iter().all(|s| !dsts.contains(s)), "user 1 and item 1 must be different nodes");
    assert!(srcs.iter().max() < dsts.iter().min(), "sources are numbered before destinations");
    let out = dir.path().join("ids.txt");
    write_id_mapping(&out, &ds).unwrap();
    assert_eq!(read_id_mapping(&out).unwrap(), ds.node_ids);
}

#[test]
fn ragged_rows_and_bad_timestamps_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = write(&dir, "ragged.csv", "u,i,ts,label,f0,f1\na,b,1,0,0.1,0.2\na,c,2,0,0.1\n");
    let err = load_event_csv(&ragged, &ColumnMapping::interactions(), false).unwrap_err().to_string();
    assert!(err.contains(":3:"), "{err}");
    let bad = write(&dir, "bad.csv", "u,i,ts,label\na,b,1,0\na,c,soon,0\n");
    let err = load_event_csv(&bad, &ColumnMapping::interactions(), false).unwrap_err().to_string();
    assert!(err.contains(":3:") && err.contains("soon"), "{err}");
}

#[test]
fn featureless_edge_lists_have_zero_edge_dim() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "msgs.txt", "10 20 1082040961\n20 30 1082155839\n10 30 1082414391\n");
    let ds = load_event_csv(&p, &ColumnMapping::edge_list(), false).unwrap();
    assert_eq!((ds.log.len(), ds.log.node_count(), ds.log.edge_dim()), (3, 3, 0));
}

#[test]
fn zero_strength_pairs_are_uniform() {
    let n = 6;
    let ds = generate_synthetic(&SyntheticSpec { nodes: n, events: 30_000, motif: Motif::Triadic, strength: 0.0, seed: 8 }).unwrap();
    let mut counts = vec![0usize; n * n];
    for e in ds.log.events() {
        counts[e.src * n + e.dst] += 1;
    }
    let cells = n * (n - 1);
    let expected = ds.log.len() as f64 / cells as f64;
    let chi2: f64 = (0..n * n).filter(|k| k / n != k % n).map(|k| (counts[k] as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.1} p {p:.4}");
    assert!((0..n).all(|k| counts[k * n + k] == 0));
}

#[test]
fn exponential_gaps_have_unit_mean() {
    let ds = generate_synthetic(&SyntheticSpec { nodes: 50, events: 20_000, motif: Motif::Random, strength: 0.0, seed: 1 }).unwrap();
    let ev = ds.log.events();
    let gaps: Vec<f64> = ev.windows(2).map(|w| w[1].t - w[0].t).collect();
    let (m, s) = mean_std(&gaps);
    assert!((m - 1.0).abs() < 4.0 / (gaps.len() as f64).sqrt(), "mean gap {m}");
    assert!((s - 1.0).abs() < 0.05, "gap std {s}");
}

#[test]
fn generator_is_deterministic_per_seed() {
    let spec = SyntheticSpec { nodes: 40, events: 500, motif: Motif::Recurrence, strength: 0.6, seed: 77 };
    let (a, b) = (generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    assert_eq!(a.log.events(), b.log.events());
    let c = generate_synthetic(&SyntheticSpec { seed: 78, ..spec }).unwrap();
    assert_ne!(a.log.events(), c.log.events());
}

#[test]
fn triadic_motif_raises_closure_beyond_three_sigma() {
    let rates = |strength: f64| -> Vec<f64> {
        (0..20)
            .map(|seed| {
                let ds = generate_synthetic(&SyntheticSpec { nodes: 500, events: 4000, motif: Motif::Triadic, strength, seed }).unwrap();
                wedge_closure_rate(&ds.log, 500, 8)
            })
            .collect()
    };
    let (m1, s1) = mean_std(&rates(0.8));
    let (m0, s0) = mean_std(&rates(0.0));
    let se = (s1 * s1 / 20.0 + s0 * s0 / 20.0).sqrt();
    assert!(m1 - m0 > 3.0 * se, "closure {m1:.3} vs {m0:.3}, se {se:.4}");
}

#[test]
fn export_matches_recomputed_embeddings_and_is_repeatable() {
    let ds = generate_synthetic(&SyntheticSpec { nodes: 12, events: 120, motif: Motif::Triadic, strength: 0.5, seed: 2 }).unwrap();
    let (model, store) = TgnModel::new(common::small_model(Toggles::FULL, 3), 0, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let nodes: Vec<String> = ["3", "0", "7"].map(String::from).to_vec();
    let t = ds.log.events()[90].t;
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let z = export_embeddings(&model, &store, &ds, &nodes, t, 25, &a).unwrap();
    export_embeddings(&model, &store, &ds, &nodes, t, 25, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + nodes.len());
    assert!(lines.iter().all(|l| l.split(',').count() == 1 + model.config.emb_dim));

    // Independent recomputation: replay the prefix, then embed each node.
    let before = ds.log.snapshot_before(t);
    let g = common::graph(&before, &ds.node_features);
    let mut state = model.init_state(12);
    model.replay(&store, &mut state, &g, before.events(), 25).unwrap();
    let idx = ds.node_index();
    let q: Vec<EmbeddingQuery> = nodes
        .iter()
        .map(|n| EmbeddingQuery { node: idx[n.as_str()], t, key: nef_key(idx[n.as_str()], role::PROBE, 0) })
        .collect();
    assert_eq!(model.infer(&store, &mut state, &g, &q).unwrap(), z);
    for (r, line) in lines[1..].iter().enumerate() {
        let parsed: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        for (p, v) in parsed.iter().zip(z.row_slice(r)) {
            assert!((p - v).abs() <= 1e-8 * v.abs().max(1e-300), "{p} vs {v}");
        }
    }

    let err = export_embeddings(&model, &store, &ds, &["nope".to_string(), "3".to_string()], t, 25, &a).unwrap_err();
    assert!(err.to_string().contains("nope"));
}
