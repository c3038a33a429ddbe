//! Train on well-separated bags, then read per-instance class evidence off
//! the global-average-pooling head and compare it with the ground-truth
//! lesion mask.
//!
//! Usage: cam_heatmap [epochs] [train_bags]

use jigsaw_mil::data::{gen_bags, BagLabel, SynthConfig, Task};
use jigsaw_mil::interpret::{cam, cam_localization_auc, export_lines};
use jigsaw_mil::nets::{forward_backbone, ModelConfig, Variant};
use jigsaw_mil::tensor::{Scalar, Tape};
use jigsaw_mil::train::{train, StepMode, TrainSettings};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let epochs: usize = arg(1, 8);
    let train_n: usize = arg(2, 150);

    let synth = SynthConfig::easy();
    let bags = gen_bags(&synth, Task::Classification, 21, train_n + 40).expect("bags");
    let (train_bags, test_bags) = bags.split_at(train_n);

    let mut cfg = ModelConfig::new(Variant::Cnn, synth.feat_dim);
    cfg.epochs = epochs;
    cfg.opt.lr = 2e-3;
    cfg.opt.beta2 = 0.99;
    let settings = TrainSettings { mode: StepMode::Stacked, eval_every: 0, bins: 4 };
    let (model, report) = train::<f32>(&cfg, train_bags, test_bags, &settings).expect("train");
    println!(
        "trained cnn on well-separated bags: {}",
        report
            .last_metrics()
            .map(|m| format!("test accuracy {:.3}", m.primary()))
            .unwrap_or_default()
    );

    // evidence map of the first positive test bag
    let bag = test_bags
        .iter()
        .find(|b| matches!(b.label, BagLabel::Class(1)))
        .expect("a positive test bag");
    let mut tape: Tape<f32> = Tape::new();
    let binding = model.bind(&mut tape, false);
    let x = tape.leaf(bag.features.map(|v| v), false);
    let (f, m, _) = forward_backbone(&mut tape, &binding, x).expect("forward");
    let features = tape.value(f).to_f64();
    let head_w = model.params.get("head.w").unwrap().to_f64();
    let head_b: Vec<f64> =
        model.params.get("head.b").unwrap().data().iter().map(|&v| Scalar::to_f64(v)).collect();
    let result = cam(&features, &head_w, &head_b, 0, bag.n(), m).expect("cam");

    let labels = bag.instance_labels.as_ref().unwrap();
    println!(
        "reconstruction: mean(scores) + bias = {:.6} (the bag logit)",
        result.reconstructed_logit()
    );
    println!(
        "localization auc vs ground-truth mask: {:.3}",
        cam_localization_auc(&result, labels).expect("auc")
    );

    // render the grid as text: '#' = lesion truth, brightness = evidence
    let g = result.grid_side;
    let lo = result.slot_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = result.slot_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shades = [' ', '.', ':', '+', '*', '@'];
    println!("evidence map (left) vs ground truth (right):");
    for row in 0..g {
        let mut evidence = String::new();
        let mut truth = String::new();
        for col in 0..g {
            let idx = row * g + col;
            if idx < result.real_instances {
                let v = (result.slot_scores[idx] - lo) / (hi - lo + 1e-12);
                evidence.push(shades[(v * (shades.len() - 1) as f64).round() as usize]);
                truth.push(if labels[idx] { '#' } else { ' ' });
            }
        }
        println!("  |{evidence}|   |{truth}|");
    }
    let csv = export_lines(&result, bag.coords.as_deref());
    println!("first lines of the export:\n{}", csv.lines().take(4).collect::<Vec<_>>().join("\n"));
}
