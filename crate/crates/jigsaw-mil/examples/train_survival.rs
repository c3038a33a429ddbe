//! Discrete-time survival training: quantile time bins, hazard head, and
//! concordance evaluation on synthetic survival bags.
//!
//! Usage: train_survival [epochs] [train_bags] [test_bags]

use jigsaw_mil::data::{gen_bags, BagLabel, SynthConfig, Task};
use jigsaw_mil::metrics::{c_index, time_bins};
use jigsaw_mil::nets::{Head, ModelConfig, Variant};
use jigsaw_mil::train::{train, EvalMetrics, StepMode, TrainSettings};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let epochs: usize = arg(1, 8);
    let train_n: usize = arg(2, 200);
    let test_n: usize = arg(3, 100);

    let synth = SynthConfig::survival();
    let bags = gen_bags(&synth, Task::Survival, 5, train_n + test_n).expect("bags");
    let (train_bags, test_bags) = bags.split_at(train_n);

    // what a perfect model could see: concordance of the true lesion fraction
    let records: Vec<_> = test_bags
        .iter()
        .map(|b| match &b.label {
            BagLabel::Survival(r) => *r,
            _ => unreachable!(),
        })
        .collect();
    let oracle: Vec<f64> = test_bags
        .iter()
        .map(|b| {
            let l = b.instance_labels.as_ref().unwrap();
            l.iter().filter(|&&x| x).count() as f64 / l.len() as f64
        })
        .collect();
    println!("oracle c-index (true lesion fraction): {:.3}", c_index(&oracle, &records).unwrap());

    let train_records: Vec<_> = train_bags
        .iter()
        .map(|b| match &b.label {
            BagLabel::Survival(r) => *r,
            _ => unreachable!(),
        })
        .collect();
    let (edges, _) = time_bins(&train_records, 4).expect("bins");
    println!("time bin edges from the train split: {:?}", edges.edges());

    let mut cfg = ModelConfig::new(Variant::Cnn, synth.feat_dim);
    cfg.head = Head::Survival(4);
    cfg.epochs = epochs;
    cfg.opt.lr = 2e-3;
    cfg.opt.beta2 = 0.99;
    let settings = TrainSettings { mode: StepMode::Stacked, eval_every: 1, bins: 4 };
    let (_, report) = train::<f32>(&cfg, train_bags, test_bags, &settings).expect("train");

    println!("{:>5} {:>10} {:>10} {:>9}", "epoch", "nll", "eqv", "c-index");
    for r in &report.records {
        let ci = match r.metrics {
            Some(EvalMetrics::Survival { c_index }) => format!("{c_index:.3}"),
            _ => "-".into(),
        };
        println!("{:>5} {:>10.4} {:>10.4} {:>9}", r.epoch, r.task_loss, r.eqv_loss, ci);
    }
}
