//! Streams events through the memory module with the recorder switched on
//! and checks the flush, read and store order of every batch.

use nef_tgn::graph::{EventLog, NodeFeatures, TemporalGraph};
use nef_tgn::tgn::{verify_protocol, ModelConfig, ProtocolStep, TgnModel, Toggles};
use nef_tgn::train::stream_scores;

fn main() -> nef_tgn::Result<()> {
    let raw = vec![(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0), (2, 3, 4.0), (1, 3, 5.0), (0, 3, 6.0)];
    let log = EventLog::new(4, 0, raw, Vec::new())?;
    let graph = TemporalGraph::build(log.clone(), NodeFeatures::empty())?;
    let mut cfg = ModelConfig { mem_dim: 4, emb_dim: 4, time_dim: 2, ..ModelConfig::default() };
    Toggles::BASELINE.apply(&mut cfg);
    let (model, store) = TgnModel::new(cfg, 0, 0)?;

    let mut state = model.init_state(4);
    state.recorder = Some(Vec::new());
    // Scoring embeds each batch (flush, then read) before storing messages.
    let negatives = [3, 0, 1, 0, 2, 1];
    let (pos, neg) = stream_scores(&model, &store, &mut state, &graph, log.events(), &negatives, None, 2)?;
    println!("positive scores {pos:.4?}\nnegative scores {neg:.4?}");
    let trace = state.recorder.take().unwrap_or_default();
    for r in &trace {
        let step = match r.step {
            ProtocolStep::Flush => "flush",
            ProtocolStep::Infer => "read",
            ProtocolStep::Store => "store",
        };
        println!("batch {} node {} {step}", r.batch, r.node);
    }
    match verify_protocol(&trace) {
        Ok(()) => println!("protocol respected over {} records", trace.len()),
        Err(e) => println!("violation: {e}"),
    }
    println!("pending messages after the stream: {}", state.messages.total());
    Ok(())
}
