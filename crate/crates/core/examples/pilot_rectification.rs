//! Direct rectification pilot at the default settings.
//!
//! `cargo run --release -p grn-core --example pilot_rectification [seed]`

use std::time::Instant;

use grn_core::experiment::{run_direct_rectification, DirectRectification};

fn main() -> grn_core::Result<()> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let start = Instant::now();
    let r = run_direct_rectification(&DirectRectification { seed, ..DirectRectification::default() })?;
    println!("seed\t{seed}");
    for (kind, e) in [("global", r.global), ("local", r.local)] {
        println!(
            "{kind}\tcorrupted {:.4}\trectified {:.4}\treduction {:.1}%",
            e.corrupted_rate(),
            e.rectified_rate(),
            100.0 * e.relative_reduction()
        );
    }
    let loss: Vec<String> = r.log.epoch_loss.iter().map(|l| format!("{l:.4}")).collect();
    println!("epoch_loss\t{}", loss.join(" "));
    println!("seconds\t{:.0}", start.elapsed().as_secs_f64());
    Ok(())
}
