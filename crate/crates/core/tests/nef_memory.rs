mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nef_tgn::graph::{EventLog, NodeId};
use nef_tgn::nef::{NefConfig, NefGenerator, NefRequest, WalkAggregator, WalkEncoderKind};
use nef_tgn::tensor::{Adam, AdamConfig, ParamStore};
use nef_tgn::tgn::{nef_key, role, verify_protocol, EmbeddingQuery, ProtocolStep, TgnModel, Toggles};
use nef_tgn::train::{negative_sample, train_batch};

fn relabel(log: &EventLog, perm: &[NodeId]) -> EventLog {
    let raw = log.events().iter().map(|e| (perm[e.src], perm[e.dst], e.t)).collect();
    let feats = log.events().iter().flat_map(|e| log.features(e.id).to_vec()).collect();
    EventLog::new(log.node_count(), log.edge_dim(), raw, feats).unwrap()
}

fn generator(cfg: NefConfig, x_dim: usize, seed: u64) -> (NefGenerator, ParamStore) {
    let mut store = ParamStore::new();
    let g = NefGenerator::new(&mut store, "nef", cfg, x_dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (g, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nef_is_invariant_under_relabeling(seed in 0u64..10_000, attention in any::<bool>(), rnn in any::<bool>()) {
        let (log, nf) = common::random_log(10, 40, 2, 1, seed);
        let mut perm: Vec<NodeId> = (0..10).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let g = common::graph(&log, &nf);
        let gp = common::graph(&relabel(&log, &perm), &nf.permuted(&perm));
        let mut cfg = common::small_nef();
        cfg.encoder = if rnn { WalkEncoderKind::BiRecurrent } else { WalkEncoderKind::Mean };
        cfg.aggregator = if attention { WalkAggregator::SelfAttention } else { WalkAggregator::Identity };
        let (nef, store) = generator(cfg, 3, seed);
        let t = log.t_max().unwrap() + 0.5;
        for (k, (i, j)) in [(0, 1), (2, 7), (4, 4), (9, 3)].into_iter().enumerate() {
            let a = nef.nef(&store, &g, NefRequest { i, j, t, key: k as u64 }).unwrap();
            let b = nef.nef(&store, &gp, NefRequest { i: perm[i], j: perm[j], t, key: k as u64 }).unwrap();
            prop_assert_eq!(a.len(), nef.out_dim());
            prop_assert!(a.iter().all(|v| v.is_finite()));
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn future_events_do_not_change_nef(seed in 0u64..10_000, cut in 10usize..35) {
        let (log, nf) = common::random_log(8, 40, 0, 2, seed);
        let t = log.events()[cut].t;
        let past = common::graph(&log.snapshot_before(t), &nf);
        let full = common::graph(&log, &nf);
        let (nef, store) = generator(common::small_nef(), 2, seed);
        for (i, j) in [(0, 1), (3, 5), (7, 2)] {
            let r = NefRequest { i, j, t, key: 17 };
            prop_assert_eq!(nef.nef(&store, &past, r).unwrap(), nef.nef(&store, &full, r).unwrap());
        }
    }
}

#[test]
fn memory_and_embeddings_ignore_future_events() {
    for seed in 0..5 {
        let (log, nf) = common::random_log(9, 60, 1, 2, seed);
        let cut = log.events()[40].t;
        let past_log = log.snapshot_before(cut);
        let (model, store) = TgnModel::new(common::small_model(Toggles::FULL, seed), 1, 2).unwrap();
        let embed = |g: &nef_tgn::graph::TemporalGraph| {
            let mut state = model.init_state(9);
            model.replay(&store, &mut state, g, past_log.events(), 7).unwrap();
            let q: Vec<EmbeddingQuery> = (0..9).map(|n| EmbeddingQuery { node: n, t: cut, key: nef_key(n, role::PROBE, 0) }).collect();
            let z = model.infer(&store, &mut state, g, &q).unwrap();
            (state.memory, z)
        };
        let (mem_a, z_a) = embed(&common::graph(&past_log, &nf));
        let (mem_b, z_b) = embed(&common::graph(&log, &nf));
        assert_eq!(mem_a, mem_b, "seed {seed}");
        assert_eq!(z_a, z_b, "seed {seed}");
    }
}

#[test]
fn training_batches_flush_before_reading_and_store_after() {
    let (log, nf) = common::random_log(7, 48, 0, 1, 3);
    let g = common::graph(&log, &nf);
    let (model, mut store) = TgnModel::new(common::small_model(Toggles::FULL, 1), 0, 1).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let mut state = model.init_state(7);
    state.recorder = Some(Vec::new());
    let universe: Vec<NodeId> = (0..7).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for batch in log.events().chunks(8) {
        train_batch(&model, &mut store, &mut adam, &mut state, &g, batch, &universe, &mut rng).unwrap();
    }
    let trace = state.recorder.unwrap();
    verify_protocol(&trace).unwrap();
    // Every endpoint of every batch is read before its message is stored.
    for (b, batch) in log.events().chunks(8).enumerate() {
        for e in batch {
            for n in [e.src, e.dst] {
                let read = trace.iter().position(|r| r.batch == b && r.node == n && r.step == ProtocolStep::Infer);
                let stored = trace.iter().position(|r| r.batch == b && r.node == n && r.step == ProtocolStep::Store);
                assert!(read.unwrap() < stored.unwrap(), "batch {b} node {n}");
            }
        }
    }
}

#[test]
fn one_step_moves_every_nef_parameter_group() {
    let (log, nf) = common::random_log(6, 30, 0, 1, 8);
    let g = common::graph(&log, &nf);
    let (model, mut store) = TgnModel::new(common::small_model(Toggles::FULL, 2), 0, 1).unwrap();
    let before = store.clone();
    let mut adam = Adam::new(AdamConfig::default());
    let mut state = model.init_state(6);
    let universe: Vec<NodeId> = (0..6).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Two batches: the second sees messages (and their NEF) from the first.
    for batch in log.events().chunks(15) {
        let r = train_batch(&model, &mut store, &mut adam, &mut state, &g, batch, &universe, &mut rng).unwrap();
        assert!(r.loss.is_finite());
    }
    let nef_ids: Vec<_> = store.ids().filter(|&id| store.get(id).name.starts_with("nef.")).collect();
    assert!(!nef_ids.is_empty());
    let moved = nef_ids.iter().filter(|&&id| store.get(id).value != before.get(id).value).count();
    assert!(moved * 10 >= nef_ids.len() * 9, "only {moved} of {} NEF tensors moved", nef_ids.len());
}

#[test]
fn baseline_toggles_build_no_nef_generator() {
    let (model, store) = TgnModel::new(common::small_model(Toggles::BASELINE, 0), 0, 0).unwrap();
    assert!(model.nef().is_none());
    assert!(store.ids().all(|id| !store.get(id).name.starts_with("nef.")));
    let (full, _) = TgnModel::new(common::small_model(Toggles::FULL, 0), 0, 0).unwrap();
    assert!(full.nef().is_some());
    assert!(full.message_dim() > model.message_dim());
}

#[test]
fn negatives_come_one_per_positive() {
    let (log, _) = common::random_log(20, 200, 0, 0, 4);
    let universe: Vec<NodeId> = (0..20).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for batch in log.events().chunks(37) {
        assert_eq!(negative_sample(batch, &universe, &mut rng).unwrap().len(), batch.len());
    }
}
