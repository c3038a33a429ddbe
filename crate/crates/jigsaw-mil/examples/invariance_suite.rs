//! Shuffle-invariance of the pooling aggregators, equivariance of
//! self-attention, and how a positional table destroys both.

use jigsaw_mil::nets::{self, Model, ModelConfig, PeMode, Variant};
use jigsaw_mil::perm::Permutation;
use jigsaw_mil::rng::{stream, tag};
use jigsaw_mil::tensor::{Tape, Tensor};
use rand::Rng;

fn randn(shape: Vec<usize>, rng: &mut jigsaw_mil::rng::Pcg) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn main() {
    let mut rng = stream(3, &[tag::VERIFY]);
    let x = randn(vec![16, 16], &mut rng);
    let perm = Permutation::sample(16, &mut rng).unwrap();
    let shuffled = perm.apply(&x).unwrap();

    println!("{:<26} {:>14} {:>14}", "aggregator", "no-PE diff", "with-PE diff");

    // pooled baselines: embed then pool
    for variant in [Variant::AbmilBaseline, Variant::MeanPool, Variant::MaxPool] {
        let mut cfg = ModelConfig::new(variant, 16);
        cfg.embed_dim = 32;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let pooled = |input: &Tensor<f64>, add_pe: bool| -> Tensor<f64> {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let mut id = tape.leaf(input.clone(), false);
            if add_pe {
                let pe = tape.leaf(nets::sinusoidal_pe::<f64>(16, 16).unwrap(), false);
                id = tape.add(id, pe).unwrap();
            }
            let e = nets::mlp_embed(&mut tape, &b, id).unwrap();
            let out = match variant {
                Variant::AbmilBaseline => nets::abmil_pool(&mut tape, &b, e).unwrap().0,
                Variant::MeanPool => tape.mean_rows(e).unwrap(),
                _ => tape.col_max(e).unwrap(),
            };
            tape.value(out).clone()
        };
        let plain = pooled(&x, false).max_abs_diff(&pooled(&shuffled, false));
        let with_pe = pooled(&x, true).max_abs_diff(&pooled(&shuffled, true));
        println!("{:<26} {:>14.2e} {:>14.2e}", variant.name(), plain, with_pe);
    }

    // transformer backbone + average pooling
    let mut cfg = ModelConfig::new(Variant::Transformer, 16);
    cfg.embed_dim = 32;
    cfg.attn_dim = 16;
    cfg.pe = PeMode::None;
    cfg.identity_start = false;
    let model: Model<f64> = Model::init(cfg).unwrap();
    let pooled = |input: &Tensor<f64>, add_pe: bool| -> Tensor<f64> {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let mut id = tape.leaf(input.clone(), false);
        if add_pe {
            let pe = tape.leaf(nets::sinusoidal_pe::<f64>(16, 16).unwrap(), false);
            id = tape.add(id, pe).unwrap();
        }
        let (f, _, _) = nets::forward_backbone(&mut tape, &b, id).unwrap();
        let out = tape.mean_rows(f).unwrap();
        tape.value(out).clone()
    };
    let plain = pooled(&x, false).max_abs_diff(&pooled(&shuffled, false));
    let with_pe = pooled(&x, true).max_abs_diff(&pooled(&shuffled, true));
    println!("{:<26} {:>14.2e} {:>14.2e}", "transformer + avg pool", plain, with_pe);

    // equivariance of a raw self-attention layer: f(S[x]) == S[f(x)]
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let a = tape.leaf(x.clone(), false);
    let s = tape.leaf(shuffled.clone(), false);
    let ea = nets::mlp_embed(&mut tape, &b, a).unwrap();
    let es = nets::mlp_embed(&mut tape, &b, s).unwrap();
    let ya = nets::self_attention(&mut tape, &b, "tf0", ea).unwrap();
    let ys = nets::self_attention(&mut tape, &b, "tf0", es).unwrap();
    let moved = perm.apply(tape.value(ya)).unwrap();
    println!(
        "\nself-attention equivariance: |f(S[x]) - S[f(x)]| = {:.2e}",
        moved.max_abs_diff(tape.value(ys))
    );
}
