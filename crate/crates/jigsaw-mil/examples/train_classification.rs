//! Train the transformer variant with the shuffling-equivalence
//! regularizer on synthetic classification bags and print the per-epoch
//! trajectory.
//!
//! Usage: train_classification [epochs] [train_bags] [test_bags]

use jigsaw_mil::data::{gen_bags, SynthConfig, Task};
use jigsaw_mil::nets::{ModelConfig, Variant};
use jigsaw_mil::train::{train, EvalMetrics, StepMode, TrainSettings};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let epochs: usize = arg(1, 10);
    let train_n: usize = arg(2, 200);
    let test_n: usize = arg(3, 100);

    let synth = SynthConfig::hard();
    let bags = gen_bags(&synth, Task::Classification, 11, train_n + test_n).expect("bags");
    let (train_bags, test_bags) = bags.split_at(train_n);

    let mut cfg = ModelConfig::new(Variant::Transformer, synth.feat_dim);
    cfg.epochs = epochs;
    cfg.opt.lr = 2e-3;
    cfg.opt.beta2 = 0.99;
    cfg.seed = 0;

    println!("transformer, lambda {}, {} epochs on {} bags", cfg.lambda, epochs, train_n);
    let settings = TrainSettings { mode: StepMode::Stacked, eval_every: 1, bins: 4 };
    let (model, report) = train::<f32>(&cfg, train_bags, test_bags, &settings).expect("train");

    println!("{:>5} {:>10} {:>10} {:>9}", "epoch", "task", "eqv", "acc");
    for r in &report.records {
        let acc = match r.metrics {
            Some(EvalMetrics::Classification(m)) => format!("{:.3}", m.accuracy),
            _ => "-".into(),
        };
        println!("{:>5} {:>10.4} {:>10.4} {:>9}", r.epoch, r.task_loss, r.eqv_loss, acc);
    }
    if let Some(EvalMetrics::Classification(m)) = report.last_metrics() {
        println!(
            "final: accuracy {:.3}, f1 {:.3}, auc {}",
            m.accuracy,
            m.f1,
            m.auc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("model has {} parameters across {} tensors", model.params.numel(), model.params.len());
}
