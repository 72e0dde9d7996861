//! Computes neighborhood edge features for a few node pairs and shows that
//! relabeling every node leaves them bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nef_tgn::graph::{EventLog, NodeFeatures, TemporalGraph};
use nef_tgn::nef::{NefConfig, NefGenerator, NefRequest};
use nef_tgn::tensor::ParamStore;
use nef_tgn::walk::WalkConfig;

fn graph(perm: &[usize]) -> nef_tgn::Result<TemporalGraph> {
    let raw = [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0), (3, 0, 4.0), (0, 2, 5.0), (4, 1, 6.0)];
    let raw = raw.iter().map(|&(u, v, t)| (perm[u], perm[v], t)).collect();
    TemporalGraph::build(EventLog::new(5, 0, raw, Vec::new())?, NodeFeatures::empty())
}

fn main() -> nef_tgn::Result<()> {
    let cfg = NefConfig { walk: WalkConfig { walks_per_node: 8, length: 2, alpha: 0.0, seed: 3 }, pos_dim: 4, time_dim: 4, rnn_hidden: 4, ..NefConfig::default() };
    let mut store = ParamStore::new();
    let nef = NefGenerator::new(&mut store, "nef", cfg, 0, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("NEF width {}", nef.out_dim());

    let identity = [0, 1, 2, 3, 4];
    let perm = [3, 0, 4, 1, 2];
    let (g, gp) = (graph(&identity)?, graph(&perm)?);
    for (key, (i, j)) in [(0, 1), (0, 2), (4, 3)].into_iter().enumerate() {
        let t = 7.0;
        let a = nef.nef(&store, &g, NefRequest { i, j, t, key: key as u64 })?;
        let b = nef.nef(&store, &gp, NefRequest { i: perm[i], j: perm[j], t, key: key as u64 })?;
        let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        let head: Vec<String> = a.iter().take(4).map(|v| format!("{v:+.4}")).collect();
        println!("NEF({i},{j}) = [{} ...]  identical after relabel: {same}", head.join(", "));
    }
    Ok(())
}
