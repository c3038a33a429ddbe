//! Regularization ablation on the hard synthetic config: train each
//! variant with the equivalence loss off and on (optionally a full lambda
//! sweep) across several seeds and report mean test accuracy.
//!
//! Usage: lambda_ablation [seeds] [epochs] [train_bags] [test_bags] [lr] [beta2]

use jigsaw_mil::data::{gen_bags, SynthConfig, Task};
use jigsaw_mil::nets::{ModelConfig, Variant};
use jigsaw_mil::train::{train, StepMode, TrainSettings};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let seeds: u64 = arg(1, 5);
    let epochs: usize = arg(2, 5);
    let train_n: usize = arg(3, 400);
    let test_n: usize = arg(4, 200);
    let lr: f64 = arg(5, 2e-3);
    let beta2: f64 = arg(6, 0.99);

    let synth = SynthConfig::hard();
    let all = gen_bags(&synth, Task::Classification, 1000, train_n + test_n).expect("bags");
    let (train_bags, test_bags) = all.split_at(train_n);

    println!(
        "hard config: {} train / {} test bags, {} epochs, lr {lr}, beta2 {beta2}",
        train_n, test_n, epochs
    );
    println!("{:<14} {:>8} {:>24} {:>8}", "variant", "lambda", "accuracy per seed", "mean");
    for variant in [Variant::Transformer, Variant::Cnn] {
        let mut means = Vec::new();
        for lambda in [0.0, 1.0] {
            let mut accs = Vec::new();
            for seed in 0..seeds {
                let mut cfg = ModelConfig::new(variant, synth.feat_dim);
                cfg.lambda = lambda;
                cfg.epochs = epochs;
                cfg.seed = seed;
                cfg.opt.lr = lr;
                cfg.opt.beta2 = beta2;
                let settings =
                    TrainSettings { mode: StepMode::Stacked, eval_every: 0, bins: 4 };
                let (_, report) =
                    train::<f32>(&cfg, train_bags, test_bags, &settings).expect("train");
                accs.push(report.last_metrics().expect("metrics").primary());
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let per_seed: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
            println!(
                "{:<14} {:>8.1} {:>24} {:>8.3}",
                variant.name(),
                lambda,
                per_seed.join(" "),
                mean
            );
            means.push(mean);
        }
        println!(
            "{:<14} regularizer effect: {:+.2} accuracy points\n",
            variant.name(),
            (means[1] - means[0]) * 100.0
        );
    }
}
