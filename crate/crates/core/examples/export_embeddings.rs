//! Trains briefly, saves a checkpoint, reloads it into a fresh model and
//! writes node embeddings at a chosen time.

use nef_tgn::data::{export_embeddings, generate_synthetic, Motif, SyntheticSpec};
use nef_tgn::eval::{prepare, ExperimentSpec};
use nef_tgn::tensor::{load_checkpoint, save_checkpoint};
use nef_tgn::tgn::{TgnModel, Toggles};
use nef_tgn::train::train;

fn main() -> nef_tgn::Result<()> {
    let dir = std::env::temp_dir().join("nef-tgn-export-example");
    std::fs::create_dir_all(&dir)?;
    let data = generate_synthetic(&SyntheticSpec { nodes: 40, events: 400, motif: Motif::Recurrence, strength: 0.8, seed: 2 })?;
    let mut spec = ExperimentSpec::default();
    spec.train.epochs = 2;
    spec.train.batch_size = 100;
    (spec.model.mem_dim, spec.model.emb_dim, spec.model.time_dim) = (8, 8, 4);
    Toggles::BASELINE.apply(&mut spec.model);

    let prep = prepare(&data, &spec, 0)?;
    let (model, mut store) = TgnModel::new(spec.model.clone(), 0, 0)?;
    train(&model, &mut store, &prep.data, &spec.train, "demo-hash", None)?;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&ckpt, &store, "demo-hash")?;

    let (fresh, mut restored) = TgnModel::new(spec.model.clone(), 0, 0)?;
    load_checkpoint(&ckpt, &mut restored, "demo-hash")?;
    let nodes: Vec<String> = ["0", "1", "2", "3"].map(String::from).to_vec();
    let t = data.log.t_max().unwrap_or(0.0) + 1.0;
    let out = dir.join("embeddings.csv");
    let z = export_embeddings(&fresh, &restored, &data, &nodes, t, 100, &out)?;
    println!("{}x{} embeddings at t={t:.2} written to {}", z.rows(), z.cols(), out.display());
    print!("{}", std::fs::read_to_string(&out)?);

    // A checkpoint from a different configuration is refused.
    let err = load_checkpoint(&ckpt, &mut restored, "other-hash").unwrap_err();
    println!("mismatched hash: {err}");
    Ok(())
}
