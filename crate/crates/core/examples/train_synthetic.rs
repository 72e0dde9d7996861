//! Trains the full model on a synthetic triadic-closure stream and reports
//! validation and test link-prediction scores per epoch.

use nef_tgn::data::{generate_synthetic, Motif, SyntheticSpec};
use nef_tgn::eval::{prepare, ExperimentSpec, Task};
use nef_tgn::tgn::TgnModel;
use nef_tgn::train::{evaluate, train, Stage};

fn main() -> nef_tgn::Result<()> {
    let data = generate_synthetic(&SyntheticSpec { nodes: 100, events: 1500, motif: Motif::Triadic, strength: 0.8, seed: 1 })?;
    let mut spec = ExperimentSpec { task: Task::TransductiveEdge, ..ExperimentSpec::default() };
    spec.train.epochs = 3;
    spec.train.lr = 0.01;
    spec.train.batch_size = 100;
    let m = &mut spec.model;
    (m.mem_dim, m.emb_dim, m.time_dim, m.neighbors) = (16, 16, 8, 5);
    m.nef.walk.walks_per_node = 4;
    (m.nef.pos_dim, m.nef.time_dim, m.nef.rnn_hidden) = (8, 8, 8);

    let prep = prepare(&data, &spec, 0)?;
    let (model, mut store) = TgnModel::new(spec.model.clone(), data.node_features.dim(), data.log.edge_dim())?;
    println!("{} events ({} train), {} parameters", data.log.len(), prep.data.train.len(), store.total_size());
    let mut history = Vec::new();
    let outcome = train(&model, &mut store, &prep.data, &spec.train, "example", Some(&mut history))?;
    for r in &outcome.history {
        let (vauc, vap) = (r.val_auc.unwrap_or(f64::NAN), r.val_ap.unwrap_or(f64::NAN));
        println!("epoch {}  loss {:.4}  train AUC {:.3}  val AUC {vauc:.3}  val AP {vap:.3}  ({:.1}s)", r.epoch, r.train_loss, r.train_auc, r.seconds);
    }
    let test = evaluate(&model, &store, &prep.data, Stage::Test)?;
    println!("best epoch {:?}; test AUC {:.3} AP {:.3} over {} edges", outcome.best_epoch, test.auc, test.ap, test.positives);
    Ok(())
}
