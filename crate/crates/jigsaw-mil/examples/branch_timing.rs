//! Wall time per training step for the three execution strategies:
//! single branch, dual-branch stacked (concurrent), dual-branch sequential.

use jigsaw_mil::data::{gen_bags, SynthConfig, Task};
use jigsaw_mil::nets::{ModelConfig, Variant};
use jigsaw_mil::train::benchmark_modes;

fn main() {
    let synth = SynthConfig::hard();
    let bags = gen_bags(&synth, Task::Classification, 1, 16).expect("generate bags");
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);

    println!("{:<14} {:>10} {:>10} {:>12} {:>9} {:>9}", "variant", "single", "stacked", "sequential", "stk/sgl", "seq/sgl");
    for variant in [Variant::Transformer, Variant::Cnn] {
        let mut cfg = ModelConfig::new(variant, synth.feat_dim);
        cfg.seed = 3;
        let t = benchmark_modes::<f32>(&cfg, &bags, steps).expect("benchmark");
        println!(
            "{:<14} {:>8.2}ms {:>8.2}ms {:>10.2}ms {:>8.2}x {:>8.2}x",
            variant.name(),
            t.single_ms,
            t.stacked_ms,
            t.sequential_ms,
            t.stacked_ratio(),
            t.sequential_ratio()
        );
    }
}
