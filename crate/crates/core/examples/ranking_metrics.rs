//! AUC-ROC and average precision on a small scored sample, including ties.

use nef_tgn::eval::{auc_roc, average_precision, mean_std};

fn main() -> nef_tgn::Result<()> {
    let scores = [0.9, 0.8, 0.8, 0.7, 0.6, 0.6, 0.3, 0.1];
    let labels = [true, true, false, true, false, true, false, false];
    println!("AUC-ROC {:.4}", auc_roc(&scores, &labels)?);
    println!("AP      {:.4}", average_precision(&scores, &labels)?);

    // A constant scorer sits at chance: AUC 0.5, AP the positive rate.
    let flat = [0.5; 8];
    println!("constant scorer AUC {:.4} AP {:.4}", auc_roc(&flat, &labels)?, average_precision(&flat, &labels)?);

    let (m, s) = mean_std(&[0.81, 0.79, 0.84]);
    println!("three runs: {m:.3} ± {s:.3}");
    Ok(())
}
