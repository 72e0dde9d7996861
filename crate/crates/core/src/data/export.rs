use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::tensor::{ParamStore, Tensor};
use crate::tgn::{nef_key, role, EmbeddingQuery, TgnModel};

/// `id,v0,...` with 9 significant digits per value.
pub fn format_embedding_line(id: &str, values: &[f64]) -> String {
    let mut s = id.to_string();
    for v in values {
        s.push(',');
        s.push_str(&format!("{v:.8e}"));
    }
    s
}

/// Replays every event before `t`, then writes `z_i(t)` for each listed
/// node (external ids) as a header plus one CSV line per node. Walk
/// substreams are keyed by node, so a node's vector does not depend on
/// which other nodes are listed.
pub fn export_embeddings(
    model: &TgnModel,
    store: &ParamStore,
    dataset: &Dataset,
    nodes: &[String],
    t: f64,
    batch_size: usize,
    path: &Path,
) -> Result<Tensor> {
    let index = dataset.node_index();
    let missing: Vec<&str> = nodes.iter().filter(|n| !index.contains_key(n.as_str())).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!("unknown node ids: {}", missing.join(", "))));
    }
    let before = dataset.log.snapshot_before(t);
    let graph = TemporalGraph::build(before.clone(), dataset.node_features.clone())?;
    let mut state = model.init_state(graph.node_count());
    model.replay(store, &mut state, &graph, before.events(), batch_size)?;
    let queries: Vec<EmbeddingQuery> = nodes
        .iter()
        .map(|n| {
            let node = index[n.as_str()];
            EmbeddingQuery { node, t, key: nef_key(node, role::PROBE, 0) }
        })
        .collect();
    let z = model.infer(store, &mut state, &graph, &queries)?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "node_id")?;
    for k in 0..z.cols() {
        write!(w, ",z{k}")?;
    }
    writeln!(w)?;
    for (r, id) in nodes.iter().enumerate() {
        writeln!(w, "{}", format_embedding_line(id, z.row_slice(r)))?;
    }
    w.flush()?;
    Ok(z)
}
