//! Finite-difference gradient checks over every trainable block and over
//! the assembled model on a small fixture graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{EdgeDecoder, NodeDecoder};
use crate::error::Result;
use crate::graph::{EventLog, NodeFeatures, TemporalGraph};
use crate::nef::{NefConfig, NefGenerator, NefRequest, TimeEncoder, WalkAggregator, WalkEncoderKind};
use crate::tensor::{grad_check, segment_attention, Activation, GradCheckReport, GruCell, Linear, LstmCell, Mlp, ParamStore, Segments, Tape, Tensor, Var};
use crate::tgn::{nef_key, role, Aggregation, EmbeddingQuery, ModelConfig, TgnModel, Toggles};
use crate::walk::WalkConfig;

/// Step and tolerance used by [`grad_check_suite`].
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates perturbed per parameter tensor in the assembled-model
/// checks (evenly strided); block checks perturb every coordinate.
pub const MODEL_COORDS: usize = 12;

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub block: &'static str,
    pub report: GradCheckReport,
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Moves every parameter by a small random offset so that zero-initialized
/// biases do not sit exactly on a ReLU kink, where central differences
/// measure half a slope.
pub fn jitter(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).value.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn check(store: &mut ParamStore, rng: &mut impl Rng, f: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>) -> Result<GradCheckReport> {
    jitter(store, rng);
    grad_check(store, f, STEP, TOLERANCE, None)
}

/// `sum(x * w)` for a fixed random `w`, so every output coordinate gets a
/// distinct, O(1) upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

/// Six nodes, two node attributes, two edge attributes.
pub fn fixture_graph(seed: u64) -> TemporalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 0), (1, 5), (5, 2), (0, 3), (4, 1), (2, 0), (5, 3)];
    let raw: Vec<_> = pairs.iter().enumerate().map(|(k, &(a, b))| (a, b, 1.0 + k as f64 + rng.gen_range(0.0..0.5))).collect();
    let feats = (0..2 * raw.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nodes = NodeFeatures::new(6, 2, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized");
    TemporalGraph::build(EventLog::new(6, 2, raw, feats).expect("ordered"), nodes).expect("valid")
}

fn nef_config(encoder: WalkEncoderKind, aggregator: WalkAggregator, seed: u64) -> NefConfig {
    NefConfig { walk: WalkConfig { walks_per_node: 3, length: 2, alpha: 0.2, seed }, pos_dim: 3, time_dim: 2, rnn_hidden: 3, encoder, aggregator }
}

/// Model configuration for the assembled-model check.
pub fn fixture_model_config(toggles: Toggles, hops: usize, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig {
        mem_dim: 4,
        emb_dim: 4,
        time_dim: 3,
        neighbors: 3,
        hops,
        nef: nef_config(WalkEncoderKind::BiRecurrent, WalkAggregator::SelfAttention, seed),
        aggregation: Aggregation::Mean,
        dropout: 0.0,
        seed,
        ..ModelConfig::default()
    };
    toggles.apply(&mut cfg);
    cfg
}

/// Loss of the whole pipeline on the fixture: replay the first eight
/// events, then flush, embed, decode and score the last four against
/// fixed negatives.
fn model_check(toggles: Toggles, hops: usize, seed: u64, aggregation: Aggregation) -> Result<GradCheckReport> {
    let graph = fixture_graph(seed);
    let cfg = ModelConfig { aggregation, ..fixture_model_config(toggles, hops, seed) };
    let (model, mut store) = TgnModel::new(cfg, 2, 2)?;
    jitter(&mut store, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let mut state = model.init_state(6);
    let events = graph.log().events().to_vec();
    model.replay(&store, &mut state, &graph, &events[..8], 3)?;
    let batch = events[8..].to_vec();
    let negatives = [4, 5, 1, 4];
    let mut queries = Vec::new();
    for (k, e) in batch.iter().enumerate() {
        queries.push(EmbeddingQuery { node: e.src, t: e.t, key: nef_key(e.id, role::SOURCE, 0) });
        queries.push(EmbeddingQuery { node: e.dst, t: e.t, key: nef_key(e.id, role::DESTINATION, 0) });
        queries.push(EmbeddingQuery { node: negatives[k], t: e.t, key: nef_key(e.id, role::NEGATIVE, 0) });
    }
    let b = batch.len();
    grad_check(
        &mut store,
        |tape: &mut Tape, s: &ParamStore| {
            let mut st = state.clone();
            let out = model.embed(tape, s, &mut st, &graph, &queries)?;
            let src = tape.gather_rows(out.z, (0..b).map(|k| 3 * k).chain((0..b).map(|k| 3 * k)).collect())?;
            let dst = tape.gather_rows(out.z, (0..b).map(|k| 3 * k + 1).chain((0..b).map(|k| 3 * k + 2)).collect())?;
            let logits = model.logits(tape, s, src, dst, None)?;
            let targets = (0..2 * b).map(|i| if i < b { 1.0 } else { 0.0 }).collect();
            tape.bce_with_logits(logits, targets)
        },
        STEP,
        TOLERANCE,
        Some(MODEL_COORDS),
    )
}

/// Runs every block check with parameters and inputs drawn from `seed`.
pub fn grad_check_suite(seed: u64) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut push = |block: &'static str, report: GradCheckReport| out.push(BlockCheck { block, report });

    let x = random(4, 3, &mut rng);
    let w = random(4, 5, &mut rng);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 3, 5, true, &mut rng)?;
    push("linear", check(&mut store, &mut rng, |t, s| { let xv = t.constant(x.clone()); let y = lin.forward(t, s, xv)?; weighted_sum(t, y, &w) })?);

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[3, 6, 5], Activation::Tanh, &mut rng)?;
    push("mlp", check(&mut store, &mut rng, |t, s| { let xv = t.constant(x.clone()); let y = mlp.forward(t, s, xv)?; weighted_sum(t, y, &w) })?);

    let h0 = random(4, 5, &mut rng);
    let c0 = random(4, 5, &mut rng);
    let mut store = ParamStore::new();
    let gru = GruCell::new(&mut store, "gru", 3, 5, &mut rng)?;
    push("gru", check(&mut store, &mut rng, |t, s| {
        let xv = t.constant(x.clone());
        let hv = t.constant(h0.clone());
        let y = gru.forward(t, s, xv, hv)?;
        weighted_sum(t, y, &w)
    })?);

    let mut store = ParamStore::new();
    let lstm = LstmCell::new(&mut store, "lstm", 3, 5, &mut rng)?;
    push("lstm", check(&mut store, &mut rng, |t, s| {
        let xv = t.constant(x.clone());
        let hv = t.constant(h0.clone());
        let cv = t.constant(c0.clone());
        let (h, c) = lstm.forward(t, s, xv, hv, cv)?;
        let y = t.add(h, c)?;
        weighted_sum(t, y, &w)
    })?);

    let dt = Tensor::column((0..4).map(|_| rng.gen_range(0.0..3.0)).collect());
    let wt = random(4, 6, &mut rng);
    let mut store = ParamStore::new();
    let time = TimeEncoder::new(&mut store, "time", 6)?;
    push("time_encoder", check(&mut store, &mut rng, |t, s| { let d = t.constant(dt.clone()); let y = time.forward(t, s, d)?; weighted_sum(t, y, &wt) })?);

    let kv = random(7, 3, &mut rng);
    let wa = random(3, 4, &mut rng);
    let qx = random(3, 3, &mut rng);
    let mut store = ParamStore::new();
    let (pq, pk, pv) = (
        Linear::new(&mut store, "q", 3, 4, true, &mut rng)?,
        Linear::new(&mut store, "k", 3, 4, false, &mut rng)?,
        Linear::new(&mut store, "v", 3, 4, true, &mut rng)?,
    );
    let seg = Segments::new(vec![0, 0, 1, 1, 1, 2, 2], 3)?;
    push("attention", check(&mut store, &mut rng, |t, s| {
        let (qv, kvv) = (t.constant(qx.clone()), t.constant(kv.clone()));
        let q = pq.forward(t, s, qv)?;
        let k = pk.forward(t, s, kvv)?;
        let v = pv.forward(t, s, kvv)?;
        let (y, _) = segment_attention(t, q, k, v, &seg)?;
        weighted_sum(t, y, &wa)
    })?);

    let graph = fixture_graph(seed);
    let reqs = [
        NefRequest { i: 0, j: 3, t: 9.5, key: 1 },
        NefRequest { i: 2, j: 5, t: 12.0, key: 2 },
        NefRequest { i: 4, j: 1, t: 13.0, key: 3 },
    ];
    for (block, encoder, aggregator) in [
        ("nef_recurrent_attention", WalkEncoderKind::BiRecurrent, WalkAggregator::SelfAttention),
        ("nef_mean", WalkEncoderKind::Mean, WalkAggregator::Identity),
    ] {
        let mut store = ParamStore::new();
        let nef = NefGenerator::new(&mut store, "nef", nef_config(encoder, aggregator, seed), 4, &mut rng)?;
        let batch = nef.sample(&graph, &reqs)?;
        let wn = random(reqs.len(), nef.out_dim(), &mut rng);
        push(block, check(&mut store, &mut rng, |t, s| { let y = nef.forward_batch(t, s, &batch)?; weighted_sum(t, y, &wn) })?);
    }

    let za = random(5, 4, &mut rng);
    let zb = random(5, 4, &mut rng);
    let mut store = ParamStore::new();
    let dec = EdgeDecoder::new(&mut store, "edge", 4, &mut rng)?;
    push("edge_decoder", check(&mut store, &mut rng, |t, s| {
        let (a, b) = (t.constant(za.clone()), t.constant(zb.clone()));
        let l = dec.logits(t, s, a, b, None)?;
        t.bce_with_logits(l, vec![1.0, 0.0, 1.0, 1.0, 0.0])
    })?);

    let mut store = ParamStore::new();
    let node = NodeDecoder::new(&mut store, "node", 4, 3, &mut rng)?;
    push("node_decoder", check(&mut store, &mut rng, |t, s| {
        let a = t.constant(za.clone());
        let l = node.logits(t, s, a, None)?;
        t.cross_entropy(l, vec![0, 2, 1, 1, 0])
    })?);

    push("model_full", model_check(Toggles::FULL, 1, seed, Aggregation::Mean)?);
    push("model_full_two_hops_last", model_check(Toggles::FULL, 2, seed, Aggregation::Last)?);
    push("model_mean_walks", model_check(Toggles { msg: true, emb: true, rnn: false }, 1, seed, Aggregation::Mean)?);
    push("model_baseline", model_check(Toggles::BASELINE, 1, seed, Aggregation::Mean)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let checks = grad_check_suite(0).unwrap();
        assert!(checks.len() >= 14);
        for c in &checks {
            assert!(c.report.passed(), "{}: {:?}", c.block, c.report);
            assert!(c.report.checked > 0, "{}", c.block);
        }
    }
}
