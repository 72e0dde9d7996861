//! Loads an interaction CSV with string node ids, splits it
//! chronologically and applies node and edge masks.

use std::io::Write;

use nef_tgn::data::{load_event_csv, ColumnMapping};
use nef_tgn::eval::{active_nodes, apply_edge_mask, apply_node_mask, chrono_split, LEAN};

fn main() -> nef_tgn::Result<()> {
    let path = std::env::temp_dir().join("nef-tgn-interactions.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "user,item,ts,state_label,f0,f1")?;
    for k in 0..20 {
        writeln!(f, "u{},i{},{},{},{:.1},{:.1}", k % 5, k % 3, 10 * k, u8::from(k == 13), k as f64 / 10.0, 1.0)?;
    }
    drop(f);

    let data = load_event_csv(&path, &ColumnMapping::interactions(), true)?;
    println!("{}: {} events, {} nodes, edge features {}", data.name, data.log.len(), data.log.node_count(), data.log.edge_dim());
    println!("first ids: {:?}", &data.node_ids[..4]);
    println!("labeled events: {}", data.positive_label_events());

    let split = chrono_split(&data.log, [0.8, 0.1, 0.1])?;
    println!("split {}/{}/{}", split.train.len(), split.val.len(), split.test.len());
    let universe = active_nodes(&data.log);
    let (kept, masked) = apply_node_mask(&split.train, &universe, LEAN, 9)?;
    let kept = apply_edge_mask(&kept, 0.25, 9)?;
    println!("masked nodes {:?}; {} training events remain", masked, kept.len());
    Ok(())
}
