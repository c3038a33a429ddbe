//! The transport reading of the equivalence loss, numerically:
//! exact assignment vs entropic solver on the forward problem, and the
//! identity between the inverse-transport objective (with the observed
//! inverse-shuffle plan) and the equivalence loss.

use jigsaw_mil::ot::{
    emd_bruteforce, inverse_ot_objective, matrix_form_check, quadratic_cost, sinkhorn_annealed,
};
use jigsaw_mil::perm::Permutation;
use jigsaw_mil::rng::{stream, tag};
use jigsaw_mil::tensor::Tensor;
use jigsaw_mil::train::equivalence_mse;
use rand::Rng;

fn main() {
    let mut rng = stream(17, &[tag::VERIFY]);

    println!("forward problem: exact assignment vs annealed entropic solver");
    println!("{:>3} {:>12} {:>12} {:>10}", "n", "exact", "entropic", "gap");
    for n in 3..=6 {
        let pts = |rng: &mut jigsaw_mil::rng::Pcg| -> Vec<Vec<f64>> {
            (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
        };
        let a = pts(&mut rng);
        let b = pts(&mut rng);
        let cost = quadratic_cost(&a, &b).unwrap();
        let (exact, _) = emd_bruteforce(&a, &b).unwrap();
        let plan = sinkhorn_annealed(&cost, 10, 4000, 1e-8).unwrap();
        let entropic = plan.cost(&cost);
        println!(
            "{n:>3} {exact:>12.6} {entropic:>12.6} {:>9.3}%",
            (entropic - exact).abs() / exact * 100.0
        );
    }

    // restoring a shuffle costs nothing: mass rematches perfectly
    let a: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64 / 4.0]).collect();
    let perm = Permutation::sample(5, &mut rng).unwrap();
    let shuffled: Vec<Vec<f64>> = perm.indices().iter().map(|&i| a[i].clone()).collect();
    let (cost0, _) = emd_bruteforce(&a, &shuffled).unwrap();
    println!("\ntransport cost of a pure shuffle: {cost0:.2e} (mass rematches exactly)");

    println!("\ninverse problem with the observed inverse-shuffle plan:");
    let n = 12;
    let f = Tensor::new(vec![n, 8], (0..n * 8).map(|_| rng.random_range(-2.0..2.0)).collect())
        .unwrap();
    let f_shuffled =
        Tensor::new(vec![n, 8], (0..n * 8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let perm = Permutation::sample(n, &mut rng).unwrap();
    let objective = inverse_ot_objective(&f, &f_shuffled, &perm).unwrap();
    let loss = equivalence_mse(&f, &f_shuffled, &perm).unwrap();
    println!("  elementwise objective          : {objective:.9}");
    println!("  matrix-form gap                : {:.2e}", matrix_form_check(&f, &f_shuffled, &perm).unwrap());
    println!("  2n x equivalence loss          : {:.9}", 2.0 * n as f64 * loss);
    println!("  difference                     : {:.2e}", (2.0 * n as f64 * loss - objective).abs());
}
