//! Finite-difference check of every trainable block and of the full model.
//! Usage: `cargo run --example gradient_check -- [seeds]`

use nef_tgn::diagnostics::grad_check_suite;

fn main() -> nef_tgn::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        for check in grad_check_suite(seed)? {
            let r = &check.report;
            worst = worst.max(r.max_rel_error);
            println!(
                "seed {seed} {:<28} max rel err {:.2e} ({} coords, {} skipped) {}",
                check.block,
                r.max_rel_error,
                r.checked,
                r.skipped,
                if r.passed() { "ok" } else { "FAILED" }
            );
        }
    }
    println!("worst relative error over {seeds} seeds: {worst:.2e}");
    Ok(())
}
