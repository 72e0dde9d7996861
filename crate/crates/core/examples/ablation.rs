//! Runs every ablation row on a small synthetic dataset and prints the
//! comparison table. Takes a few minutes.

use nef_tgn::data::{generate_synthetic, Motif, SyntheticSpec};
use nef_tgn::eval::{format_table, run_experiment, ExperimentSpec, Task};
use nef_tgn::tgn::Toggles;

fn main() -> nef_tgn::Result<()> {
    let data = generate_synthetic(&SyntheticSpec { nodes: 60, events: 600, motif: Motif::Triadic, strength: 0.8, seed: 4 })?;
    let mut base = ExperimentSpec { task: Task::InductiveEdge, n_runs: 2, ..ExperimentSpec::default() };
    base.mask.node_frac = 0.1;
    base.train.epochs = 2;
    base.train.lr = 0.01;
    base.train.batch_size = 100;
    let m = &mut base.model;
    (m.mem_dim, m.emb_dim, m.time_dim, m.neighbors) = (8, 8, 4, 4);
    m.nef.walk.walks_per_node = 3;
    (m.nef.pos_dim, m.nef.time_dim, m.nef.rnn_hidden) = (4, 4, 4);

    let mut reports = Vec::new();
    for toggles in Toggles::ablation_grid(false) {
        let mut spec = base.clone();
        toggles.apply(&mut spec.model);
        reports.push(run_experiment(&data, &spec, &toggles.label(), "example", 1)?);
    }
    print!("{}", format_table(&reports));
    Ok(())
}
