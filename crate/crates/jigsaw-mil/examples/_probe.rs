use jigsaw_mil::data::{gen_bags, SynthConfig, Task};
use jigsaw_mil::nets::{Model, ModelConfig, Variant, PeMode};
use jigsaw_mil::train::{evaluate, siamese_step, AdamW, StepMode, TrainSettings, train};
use jigsaw_mil::rng::{stream, tag};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let delta: f64 = arg(1, 2.0);
    let epochs: usize = arg(2, 6);
    let lr: f64 = arg(3, 5e-4);
    let lambda: f64 = arg(4, 0.0);
    let variant = match arg::<String>(5, "t".into()).as_str() { "t" => Variant::Transformer, "c" => Variant::Cnn, "m" => Variant::MeanPool, _ => Variant::AbmilBaseline };
    let train_n: usize = arg(6, 150);
    let gain: f64 = arg(7, 1.0);
    let beta2: f64 = arg(8, 0.999);

    let mut synth = SynthConfig::hard();
    synth.delta = delta;
    let all = gen_bags(&synth, Task::Classification, 1000, train_n + 200).expect("bags");
    let (tr, te) = all.split_at(train_n);

    let mut cfg = ModelConfig::new(variant, synth.feat_dim);
    cfg.lambda = lambda;
    cfg.epochs = epochs;
    cfg.seed = 0;
    cfg.opt.lr = lr;
    cfg.opt.beta2 = beta2;
    cfg.pe = PeMode::Ppeg;

    // manual loop so we can scale the initial weights
    let mut model: Model<f32> = Model::init(cfg.clone()).expect("init");
    for (name, t) in model.params.iter_mut() {
        let is_weight = !name.contains(".g") && !name.contains(".b") || name.contains("ff");
        let is_gain_or_bias = name.ends_with(".g") || name.ends_with(".b");
        if !is_gain_or_bias && is_weight {
            for v in t.data_mut() { *v *= gain as f32; }
        }
    }
    let mut opt = AdamW::new(&cfg.opt, &model.params);
    println!("delta={delta} lr={lr} lambda={lambda} gain={gain} {:?}", variant);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..tr.len()).collect();
        let mut org = stream(cfg.seed, &[tag::EPOCH_ORDER, epoch as u64]);
        for i in (1..order.len()).rev() { let j = rand::Rng::random_range(&mut org, 0..=i); order.swap(i, j); }
        let mut task_sum = 0.0; let mut eqv_sum = 0.0;
        for &idx in &order {
            let mut rng = stream(cfg.seed, &[tag::STEP_PERM, epoch as u64, idx as u64]);
            let out = siamese_step(&mut model, &tr[idx], lambda, &mut opt, StepMode::Stacked, &mut rng).expect("step");
            task_sum += out.task_loss; eqv_sum += out.equivalence_loss;
        }
        let m = evaluate(&model, te).expect("eval");
        println!("epoch {:>2}  task {:.4}  eqv {:.4}  acc {:.3}", epoch, task_sum / tr.len() as f64, eqv_sum / tr.len() as f64, m.primary());
    }
    let _ = (TrainSettings::default(), train::<f32> as fn(_,_,_,_) -> _);
}
