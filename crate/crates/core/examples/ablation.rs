//! Synthetic ablation: dual-stream with triplet alignment, dual without
//! alignment, and music-only, averaged over seeds.
//!
//! cargo run --release --example ablation -- [seeds] [epochs]

use std::time::Instant;

use clam_core::datakit::{synth_splits, SynthSpec};
use clam_core::evalstat::confusion_f1;
use clam_core::model::StreamMode;
use clam_core::objectives::AlignmentKind;
use clam_core::trainer::{predict, train, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seeds"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));
    let variants = [
        ("triplet", StreamMode::Dual, AlignmentKind::Triplet),
        ("none", StreamMode::Dual, AlignmentKind::None),
        ("music-only", StreamMode::MusicOnly, AlignmentKind::None),
    ];
    let mut sums = [0.0; 3];
    let start = Instant::now();
    for seed in 1..=seeds {
        let data = synth_splits(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .expect("synthetic data");
        for (i, &(name, mode, alignment)) in variants.iter().enumerate() {
            let mut cfg = TrainConfig {
                seed,
                epochs,
                ..TrainConfig::default()
            };
            cfg.model.mode = mode;
            cfg.loss.alignment = alignment;
            let out = train(&cfg, &data.train, &data.val).expect("training");
            let preds = predict(&out.best.params, &cfg.model, &data.test).expect("predict");
            let f1 = confusion_f1(&preds).expect("f1").f1;
            sums[i] += f1;
            println!(
                "seed {seed} {name:>10}: test f1 {f1:.4} (best epoch {}) {:.0}s",
                out.best_epoch,
                start.elapsed().as_secs_f64()
            );
        }
    }
    for (i, (name, _, _)) in variants.iter().enumerate() {
        println!("{name:>10}: mean test f1 {:.4}", sums[i] / seeds as f64);
    }
}
