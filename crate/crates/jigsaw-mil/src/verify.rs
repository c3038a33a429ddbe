//! Self-contained numerical verification suites: every property the
//! library's mathematics rests on, runnable without any dataset.
//!
//! Each group returns a pass/fail verdict with a one-line summary; the
//! CLI prints them as a table and exits nonzero if any group fails.

use crate::info;
use crate::interpret;
use crate::nets::{self, forward_backbone, mlp_embed, Model, ModelConfig, PeMode, Variant};
use crate::ot;
use crate::perm::Permutation;
use crate::rng::{stream, tag, Pcg};
use crate::tensor::{grad_check, random_case, Tape, Tensor, ALL_PRIMITIVES};
use crate::train::equivalence_mse;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub group: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sabotage {
    None,
    /// Test fixture: perturb the gradient-check verdict to prove the
    /// runner fails loudly on a corrupted adjoint.
    GradCheck,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub gradcheck_cases: usize,
    pub invariance_pairs: usize,
    pub matrix_cases: usize,
    pub transport_cases: usize,
    pub entropy_joints: usize,
    pub cam_cases: usize,
    pub seed: u64,
    pub sabotage: Sabotage,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            gradcheck_cases: 100,
            invariance_pairs: 200,
            matrix_cases: 100,
            transport_cases: 20,
            entropy_joints: 1000,
            cam_cases: 1000,
            seed: 2024,
            sabotage: Sabotage::None,
        }
    }
}

pub fn all_passed(reports: &[PropertyReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

pub fn render_table(reports: &[PropertyReport]) -> String {
    let mut out = format!("{:<28} {:<6} detail\n", "property group", "status");
    out.push_str(&"-".repeat(78));
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{:<28} {:<6} {}\n",
            r.group,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        ));
    }
    out
}

/// Run every verification group.
pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyReport> {
    vec![
        gradient_checks(opts),
        invariance_positive(opts),
        invariance_negative_pe(opts),
        lemma_identities(opts),
        matrix_form(opts),
        transport_vs_bruteforce(opts),
        entropy_inequality(opts),
        error_bound(opts),
        cam_reconstruction(opts),
    ]
}

fn gradient_checks(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 10]);
    let mut worst = 0.0f64;
    let mut worst_prim = "none";
    let per_prim = (opts.gradcheck_cases / ALL_PRIMITIVES.len()).max(2);
    for &p in ALL_PRIMITIVES {
        for _ in 0..per_prim {
            let inputs = random_case(p, &mut rng);
            match grad_check(p, &inputs, 1e-5) {
                Ok(err) => {
                    let err = if opts.sabotage == Sabotage::GradCheck { err + 1e-2 } else { err };
                    if err > worst {
                        worst = err;
                        worst_prim = p.name();
                    }
                }
                Err(e) => {
                    return PropertyReport {
                        group: "grad_check",
                        passed: false,
                        detail: format!("{}: {e}", p.name()),
                    }
                }
            }
        }
    }
    PropertyReport {
        group: "grad_check",
        passed: worst < 1e-4,
        detail: format!(
            "{} primitives x {} cases, worst rel err {worst:.2e} ({worst_prim})",
            ALL_PRIMITIVES.len(),
            per_prim
        ),
    }
}

fn gaussian(rng: &mut Pcg) -> f64 {
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn randn(shape: Vec<usize>, rng: &mut Pcg) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| gaussian(rng)).collect()).unwrap()
}

/// Small double-precision models for the invariance suites.
fn pool_models(seed: u64) -> Vec<(&'static str, Model<f64>)> {
    let mut models = Vec::new();
    for (name, variant) in [
        ("abmil-pool", Variant::AbmilBaseline),
        ("mean-pool", Variant::MeanPool),
        ("max-pool", Variant::MaxPool),
    ] {
        let mut cfg = ModelConfig::new(variant, 16);
        cfg.embed_dim = 32;
        cfg.seed = seed;
        models.push((name, Model::init(cfg).unwrap()));
    }
    models
}

fn backbone_model(seed: u64, pe: PeMode) -> Model<f64> {
    let mut cfg = ModelConfig::new(Variant::Transformer, 16);
    cfg.embed_dim = 32;
    cfg.attn_dim = 16;
    cfg.pe = pe;
    cfg.identity_start = false;
    cfg.seed = seed;
    Model::init(cfg).unwrap()
}

/// Pooled bag vector of a model on raw instances, with optional fixed
/// positional table added to the inputs first.
fn pooled_output(model: &Model<f64>, x: &Tensor<f64>, add_pe: bool) -> Tensor<f64> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, false);
    let input = if add_pe {
        let pe = nets::sinusoidal_pe::<f64>(x.shape()[0], x.shape()[1]).unwrap();
        let a = tape.leaf(x.clone(), false);
        let b = tape.leaf(pe, false);
        tape.add(a, b).unwrap()
    } else {
        tape.leaf(x.clone(), false)
    };
    match model.config.variant {
        Variant::Transformer | Variant::Cnn => {
            let (f, _, _) = forward_backbone(&mut tape, &binding, input).unwrap();
            let pooled = tape.mean_rows(f).unwrap();
            tape.value(pooled).clone()
        }
        Variant::AbmilBaseline => {
            let e = mlp_embed(&mut tape, &binding, input).unwrap();
            let (bag, _) = nets::abmil_pool(&mut tape, &binding, e).unwrap();
            tape.value(bag).clone()
        }
        Variant::MeanPool | Variant::MaxPool => {
            let e = mlp_embed(&mut tape, &binding, input).unwrap();
            let pooled = if model.config.variant == Variant::MeanPool {
                tape.mean_rows(e).unwrap()
            } else {
                tape.col_max(e).unwrap()
            };
            tape.value(pooled).clone()
        }
    }
}

fn invariance_positive(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 11]);
    let mut models = pool_models(opts.seed);
    models.push(("transformer-gap", backbone_model(opts.seed, PeMode::None)));
    let squares = [4usize, 9, 16, 25];
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    for pair in 0..opts.invariance_pairs {
        // perfect squares keep the grid padding out of the comparison
        let n = squares[pair % squares.len()];
        let x = randn(vec![n, 16], &mut rng);
        let perm = Permutation::sample(n, &mut rng).unwrap();
        let shuffled = perm.apply(&x).unwrap();
        for (name, model) in models.iter() {
            let a = pooled_output(model, &x, false);
            let b = pooled_output(model, &shuffled, false);
            let diff = a.max_abs_diff(&b);
            if diff > worst {
                worst = diff;
                worst_case = format!("{name}, n={n}");
            }
        }
    }
    PropertyReport {
        group: "shuffle_invariance",
        passed: worst < 1e-8,
        detail: format!(
            "{} pairs x 4 aggregators, worst diff {worst:.2e} ({worst_case})",
            opts.invariance_pairs
        ),
    }
}

fn invariance_negative_pe(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 12]);
    let mut models = pool_models(opts.seed ^ 1);
    models.push(("transformer-gap", backbone_model(opts.seed ^ 1, PeMode::None)));
    let squares = [4usize, 9, 16, 25];
    let mut broken = 0usize;
    let mut total = 0usize;
    for pair in 0..opts.invariance_pairs {
        let n = squares[pair % squares.len()];
        let x = randn(vec![n, 16], &mut rng);
        let perm = Permutation::sample(n, &mut rng).unwrap();
        let shuffled = perm.apply(&x).unwrap();
        for (_name, model) in models.iter() {
            let a = pooled_output(model, &x, true);
            let b = pooled_output(model, &shuffled, true);
            total += 1;
            if a.max_abs_diff(&b) > 1e-3 {
                broken += 1;
            }
        }
    }
    let frac = broken as f64 / total as f64;
    PropertyReport {
        group: "pe_breaks_invariance",
        passed: frac >= 0.95,
        detail: format!("fixed positional table broke invariance on {:.1}% of {total} cases", frac * 100.0),
    }
}

fn lemma_identities(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 13]);
    let mut act_exact = true;
    let mut gram_worst = 0.0f64;
    let mut orth_exact = true;
    let mut comm_worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let x = randn(vec![n, 6], &mut rng);
        let perm = Permutation::sample(n, &mut rng).unwrap();
        let shuffled = perm.apply(&x).unwrap();

        // elementwise activations commute with shuffling, exactly
        let mut tape = Tape::new();
        let a = tape.leaf(x.clone(), false);
        let s = tape.leaf(shuffled.clone(), false);
        for act in 0..3 {
            let (ya, ys) = match act {
                0 => (tape.tanh(a).unwrap(), tape.tanh(s).unwrap()),
                1 => (tape.relu(a).unwrap(), tape.relu(s).unwrap()),
                _ => (tape.sigmoid(a).unwrap(), tape.sigmoid(s).unwrap()),
            };
            let moved = perm.apply(tape.value(ya)).unwrap();
            if moved.data() != tape.value(ys).data() {
                act_exact = false;
            }
            let d = moved.max_abs_diff(tape.value(ys));
            comm_worst = comm_worst.max(d);
        }

        // Gram matrix is shuffle-invariant
        let at = tape.transpose(a).unwrap();
        let st = tape.transpose(s).unwrap();
        let gram_a = tape.matmul(at, a).unwrap();
        let gram_s = tape.matmul(st, s).unwrap();
        gram_worst = gram_worst.max(tape.value(gram_a).max_abs_diff(tape.value(gram_s)));

        // the matrix form is orthonormal, exactly (0/1 entries)
        let p: Tensor<f64> = perm.to_matrix();
        let pid = tape.leaf(p, false);
        let pt = tape.transpose(pid).unwrap();
        let ptp = tape.matmul(pt, pid).unwrap();
        let eye: Tensor<f64> = Permutation::identity(n).to_matrix();
        if tape.value(ptp).data() != eye.data() {
            orth_exact = false;
        }
    }
    let passed = act_exact && orth_exact && gram_worst < 1e-10;
    PropertyReport {
        group: "lemma_identities",
        passed,
        detail: format!(
            "activation commutation exact: {act_exact}; gram diff {gram_worst:.2e}; PtP=I exact: {orth_exact}"
        ),
    }
}

fn matrix_form(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 14]);
    let mut worst_form = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..opts.matrix_cases {
        let n = rng.random_range(2..=16);
        let k = rng.random_range(1..=8);
        let f = randn(vec![n, k], &mut rng);
        let fs = randn(vec![n, k], &mut rng);
        let perm = Permutation::sample(n, &mut rng).unwrap();
        worst_form = worst_form.max(ot::matrix_form_check(&f, &fs, &perm).unwrap());
        let objective = ot::inverse_ot_objective(&f, &fs, &perm).unwrap();
        let loss = equivalence_mse(&f, &fs, &perm).unwrap();
        worst_scale = worst_scale.max((loss * 2.0 * n as f64 - objective).abs());
    }
    PropertyReport {
        group: "matrix_form",
        passed: worst_form < 1e-9 && worst_scale < 1e-9,
        detail: format!(
            "{} cases: objective gap {worst_form:.2e}, 2n-scaling gap {worst_scale:.2e}",
            opts.matrix_cases
        ),
    }
}

fn transport_vs_bruteforce(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 15]);
    let mut worst_rel = 0.0f64;
    for case in 0..opts.transport_cases {
        let n = 3 + case % 4; // up to 6 points
        let points = |rng: &mut Pcg| -> Vec<Vec<f64>> {
            (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
        };
        let a = points(&mut rng);
        let b = points(&mut rng);
        let cost = ot::quadratic_cost(&a, &b).unwrap();
        let (exact, _) = ot::emd_bruteforce(&a, &b).unwrap();
        match ot::sinkhorn_annealed(&cost, 10, 4000, 1e-8) {
            Ok(plan) => {
                let rel = (plan.cost(&cost) - exact).abs() / exact.max(1e-9);
                worst_rel = worst_rel.max(rel);
            }
            Err(e) => {
                return PropertyReport {
                    group: "transport_check",
                    passed: false,
                    detail: format!("entropic solver failed: {e}"),
                }
            }
        }
    }
    PropertyReport {
        group: "transport_check",
        passed: worst_rel <= 0.01,
        detail: format!(
            "{} point sets (n<=6): worst relative cost gap {:.3}%",
            opts.transport_cases,
            worst_rel * 100.0
        ),
    }
}

fn entropy_inequality(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 16]);
    let mut min_gap = f64::INFINITY;
    for _ in 0..opts.entropy_joints {
        let dims = vec![
            rng.random_range(2..=3),
            rng.random_range(2..=3),
            rng.random_range(2..=3),
        ];
        let joint = info::random_joint(dims, &mut rng);
        let pi = info::positional_information(&joint).unwrap();
        min_gap = min_gap.min(pi.cmi);
    }
    let mut worst_ci = 0.0f64;
    for _ in 0..100 {
        let joint = info::conditionally_independent_joint(3, 2, 2, &mut rng);
        let pi = info::positional_information(&joint).unwrap();
        worst_ci = worst_ci.max(pi.cmi.abs());
    }
    PropertyReport {
        group: "entropy_inequality",
        passed: min_gap >= -1e-12 && worst_ci < 1e-9,
        detail: format!(
            "{} joints: min information gap {min_gap:.2e}; independence gap {worst_ci:.2e}",
            opts.entropy_joints
        ),
    }
}

fn error_bound(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 17]);
    let mut holds_all = true;
    for _ in 0..opts.entropy_joints {
        let dims = vec![rng.random_range(2..=4), rng.random_range(2..=4)];
        let joint = info::random_joint(dims, &mut rng);
        if !info::half_entropy_bound(&joint).unwrap().holds {
            holds_all = false;
        }
    }
    // tight in the uniform binary case
    let uniform = info::DiscreteJoint::new(vec![2, 2], vec![0.25; 4]).unwrap();
    let r = info::half_entropy_bound(&uniform).unwrap();
    let tight = (r.bayes_error - 0.5).abs() < 1e-12 && (r.bound - 0.5).abs() < 1e-12;
    PropertyReport {
        group: "error_bound",
        passed: holds_all && tight,
        detail: format!(
            "{} joints: bound held everywhere: {holds_all}; uniform-binary equality: {tight}",
            opts.entropy_joints
        ),
    }
}

fn cam_reconstruction(opts: &VerifyOptions) -> PropertyReport {
    let mut rng = stream(opts.seed, &[tag::VERIFY, 18]);
    let mut worst = 0.0f64;
    for _ in 0..opts.cam_cases {
        let slots = rng.random_range(1..=16);
        let width = rng.random_range(1..=8);
        let classes = rng.random_range(1..=3);
        let class = rng.random_range(0..classes);
        let f = randn(vec![slots, width], &mut rng);
        let w = randn(vec![width, classes], &mut rng);
        let b: Vec<f64> = (0..classes).map(|_| gaussian(&mut rng)).collect();
        let result = interpret::cam(&f, &w, &b, class, slots, 1).unwrap();
        // direct logit through mean + head
        let mut logit = b[class];
        for l in 0..width {
            let mean: f64 = (0..slots).map(|i| f.row(i)[l]).sum::<f64>() / slots as f64;
            logit += mean * w.data()[l * classes + class];
        }
        worst = worst.max((result.reconstructed_logit() - logit).abs());
    }
    PropertyReport {
        group: "cam_reconstruction",
        passed: worst < 1e-6,
        detail: format!("{} cases: worst identity error {worst:.2e}", opts.cam_cases),
    }
}
