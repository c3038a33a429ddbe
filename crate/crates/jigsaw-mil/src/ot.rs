//! Optimal-transport checks for the equivalence regularizer.
//!
//! The ordering-restoration view: moving shuffled positions back to their
//! original arrangement is a transport problem with uniform marginals. The
//! forward problem (exact assignment, entropic solver) is solved here only
//! to validate numerically that the shortcut the trainer takes — plugging
//! the observed inverse-shuffle plan into the inverse-OT objective — reduces
//! to the shuffling-equivalence loss up to its normalization.

use crate::perm::Permutation;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("point sets must be nonempty and of equal size/dimension: {0}")]
    BadPoints(String),
    #[error("brute-force assignment supports n <= {max}, got {n}; use the entropic solver")]
    TooLarge { n: usize, max: usize },
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("entropic solver did not converge in {iters} iterations (marginal violation {violation:.3e})")]
    NoConvergence { iters: usize, violation: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

const BRUTE_FORCE_MAX: usize = 8;

/// Squared-distance cost matrix between two point sets.
pub fn quadratic_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Tensor<f64>, OtError> {
    if a.is_empty() || a.len() != b.len() {
        return Err(OtError::BadPoints(format!("{} vs {} points", a.len(), b.len())));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(OtError::BadPoints("inconsistent coordinate dimensions".into()));
    }
    let n = a.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] =
                a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(Tensor::new(vec![n, n], c).expect("square cost"))
}

/// A nonnegative transport plan with its marginal violation.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub matrix: Tensor<f64>,
    /// Max absolute deviation of any row/column sum from the uniform
    /// marginal 1/n.
    pub marginal_violation: f64,
}

impl TransportPlan {
    fn from_matrix(matrix: Tensor<f64>) -> Self {
        let n = matrix.shape()[0];
        let target = 1.0 / n as f64;
        let mut violation = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| matrix.data()[i * n + j]).sum();
            let col: f64 = (0..n).map(|j| matrix.data()[j * n + i]).sum();
            violation = violation.max((row - target).abs()).max((col - target).abs());
        }
        Self { matrix, marginal_violation: violation }
    }

    pub fn cost(&self, c: &Tensor<f64>) -> f64 {
        self.matrix.data().iter().zip(c.data()).map(|(&t, &cij)| t * cij).sum()
    }
}

/// Exact minimal transport cost between two small point sets under uniform
/// marginals and quadratic cost. With uniform marginals an optimal plan is a
/// permutation, so the minimum over all n! assignments is exact.
pub fn emd_bruteforce(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> Result<(f64, TransportPlan), OtError> {
    let n = a.len();
    if n > BRUTE_FORCE_MAX {
        return Err(OtError::TooLarge { n, max: BRUTE_FORCE_MAX });
    }
    let cost = quadratic_cost(a, b)?;
    let c = cost.data();

    let mut best = f64::INFINITY;
    let mut best_assign: Vec<usize> = (0..n).collect();
    let mut assign: Vec<usize> = (0..n).collect();
    // Heap's algorithm over all assignments
    fn heaps(
        k: usize,
        assign: &mut Vec<usize>,
        c: &[f64],
        n: usize,
        best: &mut f64,
        best_assign: &mut Vec<usize>,
    ) {
        if k <= 1 {
            let total: f64 = assign.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
            if total < *best {
                *best = total;
                best_assign.clone_from(assign);
            }
            return;
        }
        for i in 0..k {
            heaps(k - 1, assign, c, n, best, best_assign);
            if k % 2 == 0 {
                assign.swap(i, k - 1);
            } else {
                assign.swap(0, k - 1);
            }
        }
    }
    heaps(n, &mut assign, c, n, &mut best, &mut best_assign);

    let mut plan = vec![0.0; n * n];
    for (i, &j) in best_assign.iter().enumerate() {
        plan[i * n + j] = 1.0 / n as f64;
    }
    let plan = TransportPlan::from_matrix(Tensor::new(vec![n, n], plan).expect("plan"));
    Ok((best / n as f64, plan))
}

/// Log-domain alternating scaling from given starting potentials. Returns
/// the plan and whether the marginal tolerance was reached.
fn sinkhorn_iterate(
    cost: &Tensor<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
    f: &mut [f64],
    g: &mut [f64],
) -> Result<(TransportPlan, bool), OtError> {
    if epsilon <= 0.0 {
        return Err(OtError::BadEpsilon(epsilon));
    }
    let n = cost.shape()[0];
    if cost.shape() != [n, n] {
        return Err(OtError::ShapeMismatch(format!("cost must be square, got {:?}", cost.shape())));
    }
    let c = cost.data();
    let log_marginal = (1.0 / n as f64).ln();

    let logsumexp = |vals: &[f64]| -> f64 {
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    };

    let plan_of = |f: &[f64], g: &[f64]| -> Tensor<f64> {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[i * n + j] = ((f[i] + g[j] - c[i * n + j]) / epsilon).exp();
            }
        }
        Tensor::new(vec![n, n], t).expect("plan")
    };

    let mut scratch = vec![0.0f64; n];
    for iter in 0..max_iters {
        for i in 0..n {
            for j in 0..n {
                scratch[j] = (g[j] - c[i * n + j]) / epsilon;
            }
            f[i] = epsilon * (log_marginal - logsumexp(&scratch));
        }
        for j in 0..n {
            for i in 0..n {
                scratch[i] = (f[i] - c[i * n + j]) / epsilon;
            }
            g[j] = epsilon * (log_marginal - logsumexp(&scratch));
        }
        if iter % 4 == 3 || iter + 1 == max_iters {
            let plan = TransportPlan::from_matrix(plan_of(f, g));
            if plan.marginal_violation < tol {
                return Ok((plan, true));
            }
        }
    }
    Ok((TransportPlan::from_matrix(plan_of(f, g)), false))
}

/// Entropic-regularized transport with uniform marginals. Errors with the
/// final violation when the tolerance is not reached within `max_iters`.
pub fn sinkhorn(
    cost: &Tensor<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan, OtError> {
    let n = cost.shape()[0];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let (plan, converged) = sinkhorn_iterate(cost, epsilon, max_iters, tol, &mut f, &mut g)?;
    if converged {
        Ok(plan)
    } else {
        Err(OtError::NoConvergence { iters: max_iters, violation: plan.marginal_violation })
    }
}

/// Entropic solver with a geometric epsilon schedule (halving per stage,
/// starting at 1) and warm-started potentials, so the plan approaches the
/// exact assignment. Only the final stage must meet the tolerance.
pub fn sinkhorn_annealed(
    cost: &Tensor<f64>,
    stages: usize,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan, OtError> {
    if stages == 0 {
        return Err(OtError::BadEpsilon(0.0));
    }
    let n = cost.shape()[0];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut last = None;
    for stage in 0..stages {
        let epsilon = 0.5f64.powi(stage as i32);
        let final_stage = stage + 1 == stages;
        let (plan, converged) =
            sinkhorn_iterate(cost, epsilon, max_iters, tol, &mut f, &mut g)?;
        if final_stage && !converged {
            return Err(OtError::NoConvergence {
                iters: max_iters,
                violation: plan.marginal_violation,
            });
        }
        last = Some(plan);
    }
    Ok(last.expect("stages > 0"))
}

/// The simplified inverse-transport objective with the observed plan set to
/// the inverse shuffle: `sum_j ||f[perm(j)] - f_shuffled[j]||²`.
pub fn inverse_ot_objective(
    f: &Tensor<f64>,
    f_shuffled: &Tensor<f64>,
    perm: &Permutation,
) -> Result<f64, OtError> {
    if f.shape() != f_shuffled.shape() {
        return Err(OtError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            f.shape(),
            f_shuffled.shape()
        )));
    }
    if f.shape()[0] != perm.n() {
        return Err(OtError::ShapeMismatch(format!(
            "{} rows vs permutation over {}",
            f.shape()[0],
            perm.n()
        )));
    }
    let stride = f.row_stride();
    let mut total = 0.0;
    for (j, &pj) in perm.indices().iter().enumerate() {
        let fi = &f.data()[pj * stride..(pj + 1) * stride];
        let gj = &f_shuffled.data()[j * stride..(j + 1) * stride];
        total += fi.iter().zip(gj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// Absolute difference between the elementwise inverse-OT objective and its
/// matrix form `||perm(f) - f_shuffled||²_F`. Zero up to rounding.
pub fn matrix_form_check(
    f: &Tensor<f64>,
    f_shuffled: &Tensor<f64>,
    perm: &Permutation,
) -> Result<f64, OtError> {
    let elementwise = inverse_ot_objective(f, f_shuffled, perm)?;
    let permuted = perm
        .apply(f)
        .map_err(|e| OtError::ShapeMismatch(e.to_string()))?;
    let frobenius: f64 = permuted
        .data()
        .iter()
        .zip(f_shuffled.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((elementwise - frobenius).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};
    use rand::Rng;

    fn points<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn emd_identical_sets_cost_zero_identity_plan() {
        let p = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]];
        let (cost, plan) = emd_bruteforce(&p, &p).unwrap();
        assert_eq!(cost, 0.0);
        for i in 0..3 {
            assert_eq!(plan.matrix.data()[i * 3 + i], 1.0 / 3.0);
        }
    }

    #[test]
    fn emd_swapped_points_rematch_perfectly() {
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![1.0], vec![0.0]];
        let (cost, _) = emd_bruteforce(&a, &b).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn emd_monotone_matching_hand_case() {
        // 0,1,2 vs 0.5,1.5,2.5: each moves 0.5, squared cost 0.25
        let a = vec![vec![0.0], vec![1.0], vec![2.0]];
        let b = vec![vec![0.5], vec![1.5], vec![2.5]];
        let (cost, _) = emd_bruteforce(&a, &b).unwrap();
        assert!((cost - 0.25).abs() < 1e-12);
    }

    #[test]
    fn emd_is_symmetric_and_zero_under_shuffles() {
        let mut rng = stream(31, &[tag::VERIFY, 1]);
        for _ in 0..10 {
            let a = points(5, 2, &mut rng);
            let b = points(5, 2, &mut rng);
            let (ab, _) = emd_bruteforce(&a, &b).unwrap();
            let (ba, _) = emd_bruteforce(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);

            let perm = crate::perm::Permutation::sample(5, &mut rng).unwrap();
            let shuffled: Vec<Vec<f64>> =
                perm.indices().iter().map(|&i| a[i].clone()).collect();
            let (cost, _) = emd_bruteforce(&a, &shuffled).unwrap();
            assert!(cost.abs() < 1e-12, "shuffle should rematch at zero cost, got {cost}");
        }
    }

    #[test]
    fn emd_rejects_large_sets() {
        let mut rng = stream(32, &[tag::VERIFY, 2]);
        let a = points(9, 2, &mut rng);
        assert!(matches!(emd_bruteforce(&a, &a), Err(OtError::TooLarge { .. })));
    }

    #[test]
    fn sinkhorn_zero_cost_gives_uniform_plan() {
        let c = Tensor::zeros(vec![4, 4]);
        let plan = sinkhorn(&c, 0.5, 500, 1e-10).unwrap();
        for &v in plan.matrix.data() {
            assert!((v - 1.0 / 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_marginals_are_feasible_and_nonnegative() {
        let mut rng = stream(33, &[tag::VERIFY, 3]);
        let a = points(6, 2, &mut rng);
        let b = points(6, 2, &mut rng);
        let c = quadratic_cost(&a, &b).unwrap();
        let plan = sinkhorn(&c, 0.1, 8000, 1e-8).unwrap();
        assert!(plan.marginal_violation < 1e-8);
        assert!(plan.matrix.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn annealed_sinkhorn_approaches_brute_force() {
        let mut rng = stream(34, &[tag::VERIFY, 4]);
        for trial in 0..10 {
            let n = 3 + (trial % 4);
            let a = points(n, 2, &mut rng);
            let b = points(n, 2, &mut rng);
            let c = quadratic_cost(&a, &b).unwrap();
            let (exact, _) = emd_bruteforce(&a, &b).unwrap();
            let plan = sinkhorn_annealed(&c, 10, 4000, 1e-8).unwrap();
            let approx = plan.cost(&c);
            assert!(
                (approx - exact).abs() <= 0.01 * exact.max(1e-9),
                "n={n}: entropic {approx} vs exact {exact}"
            );
        }
    }

    #[test]
    fn inverse_objective_hand_cases() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let f_swapped = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let swap = Permutation::from_indices(vec![1, 0]).unwrap();
        let id = Permutation::identity(2);
        // shuffled map equals perm(f): objective zero
        assert_eq!(inverse_ot_objective(&f, &f_swapped, &swap).unwrap(), 0.0);
        assert_eq!(inverse_ot_objective(&f, &f, &id).unwrap(), 0.0);
        // mismatched orderings pay the full squared distance
        assert_eq!(inverse_ot_objective(&f, &f_swapped, &id).unwrap(), 2.0);
    }

    #[test]
    fn matrix_form_identity_holds() {
        let mut rng = stream(35, &[tag::VERIFY, 5]);
        for _ in 0..100 {
            let n = rng.random_range(2..=16);
            let k = rng.random_range(1..=8);
            let f = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let fs = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let perm = Permutation::sample(n, &mut rng).unwrap();
            let diff = matrix_form_check(&f, &fs, &perm).unwrap();
            assert!(diff < 1e-9, "matrix-form gap {diff}");
        }
    }

    #[test]
    fn equivalence_loss_is_the_objective_up_to_scale() {
        let mut rng = stream(36, &[tag::VERIFY, 6]);
        for _ in 0..50 {
            let n = rng.random_range(2..=12);
            let k = rng.random_range(1..=6);
            let f = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let fs = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let perm = Permutation::sample(n, &mut rng).unwrap();
            let objective = inverse_ot_objective(&f, &fs, &perm).unwrap();
            let loss = crate::train::equivalence_mse(&f, &fs, &perm).unwrap();
            assert!(
                (loss * 2.0 * n as f64 - objective).abs() < 1e-9,
                "2n * loss {} vs objective {}",
                loss * 2.0 * n as f64,
                objective
            );
        }
    }
}
