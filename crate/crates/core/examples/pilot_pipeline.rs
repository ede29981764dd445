//! Toy-scale pipeline pilot: 64 labeled / 448 unlabeled / 128 test at 64×64
//! with eight categories, default configuration, raw-label ablation on.
//!
//! `cargo run --release -p grn-core --example pilot_pipeline [seed] [run-dir]`
//!
//! The seed drives both the corpus and the training streams.

use std::path::PathBuf;
use std::time::Instant;

use grn_core::corpus::{generate, CorpusSpec, Split};
use grn_core::pipeline::{evaluate_labels, run_pipeline, RunDir};
use grn_core::PipelineConfig;

fn main() -> grn_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let dir = args.next().map(|p| RunDir { path: PathBuf::from(p), resume: false });
    let start = Instant::now();
    let (corpus, hidden) = generate(&CorpusSpec { seed, ..CorpusSpec::default() })?;
    let cfg = PipelineConfig { seed, ablate_raw: true, ..PipelineConfig::default() };
    let run = run_pipeline(&corpus, &cfg, dir)?;
    println!("seed\t{seed}");
    for m in &run.metrics {
        println!("{}\tmean_iou\t{:.4}", m.stage, m.report.mean_iou);
    }
    // pseudo-label quality on the unlabeled split, scored with the hidden labels
    let unlabeled: Vec<_> = corpus.split(Split::Unlabeled).collect();
    let gts: Vec<_> = unlabeled.iter().map(|s| &hidden.0[&s.id]).collect();
    let pseudo: Vec<_> = run.pseudo.iter().filter(|(id, _)| hidden.0.contains_key(id)).map(|(_, l)| l).collect();
    let rectified: Vec<_> = run.rectified.iter().map(|(_, l)| l).collect();
    for (name, labels) in [("pseudo", &pseudo), ("rectified", &rectified)] {
        let r = evaluate_labels(labels, &gts, corpus.categories.len(), cfg.protocol)?;
        println!("{name}_labels\tpixel_error\t{:.4}", 1.0 - r.pixel_accuracy);
    }
    println!("seconds\t{:.0}", start.elapsed().as_secs_f64());
    Ok(())
}
