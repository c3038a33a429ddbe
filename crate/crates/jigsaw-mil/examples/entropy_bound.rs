//! Conditional-entropy accounting for positional information: the
//! label-uncertainty gap from conditioning on positions, and the
//! half-entropy bound on the Bayes error.

use jigsaw_mil::info::{
    conditionally_independent_joint, half_entropy_bound, positional_information, random_joint,
    DiscreteJoint,
};
use jigsaw_mil::rng::{stream, tag};

fn main() {
    let mut rng = stream(23, &[tag::VERIFY]);

    // positions carry the label exactly; features are noise
    let copy = DiscreteJoint::new(
        vec![2, 2, 2],
        vec![0.25, 0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.25],
    )
    .unwrap();
    let pi = positional_information(&copy).unwrap();
    println!("positions duplicate the label:");
    println!("  H(Y|X) = {:.4}  H(Y|X,P) = {:.4}  I(Y;P|X) = {:.4}", pi.h_y_given_x, pi.h_y_given_xp, pi.cmi);

    // conditional independence: positions add nothing
    let ci = conditionally_independent_joint(3, 2, 2, &mut rng);
    let pi = positional_information(&ci).unwrap();
    println!("positions conditionally independent of the label:");
    println!("  H(Y|X) = {:.4}  H(Y|X,P) = {:.4}  I(Y;P|X) = {:.2e}", pi.h_y_given_x, pi.h_y_given_xp, pi.cmi);

    // the gap is nonnegative over random joints
    let mut min_gap = f64::INFINITY;
    for _ in 0..1000 {
        let joint = random_joint(vec![3, 2, 2], &mut rng);
        min_gap = min_gap.min(positional_information(&joint).unwrap().cmi);
    }
    println!("minimum information gap over 1000 random joints: {min_gap:.2e} (never negative)");

    // Bayes error vs half the conditional entropy
    println!("\nhalf-entropy bound on the Bayes error:");
    let uniform = DiscreteJoint::new(vec![2, 2], vec![0.25; 4]).unwrap();
    let r = half_entropy_bound(&uniform).unwrap();
    println!("  uniform binary: error {:.3} <= bound {:.3} (tight)", r.bayes_error, r.bound);
    let skew = DiscreteJoint::new(vec![2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap();
    let r = half_entropy_bound(&skew).unwrap();
    println!("  skewed channel: error {:.3} <= bound {:.3}", r.bayes_error, r.bound);
    let mut worst_margin = f64::INFINITY;
    let mut all_hold = true;
    for _ in 0..1000 {
        let joint = random_joint(vec![3, 3], &mut rng);
        let r = half_entropy_bound(&joint).unwrap();
        all_hold &= r.holds;
        worst_margin = worst_margin.min(r.bound - r.bayes_error);
    }
    println!("  1000 random joints: bound held everywhere = {all_hold}, smallest margin {worst_margin:.4}");
}
