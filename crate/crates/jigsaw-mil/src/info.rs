//! Finite-distribution information theory: conditional entropies over small
//! discrete joints, the positional-information inequality
//! `H(Y|X) >= H(Y|X,P)`, and the half-entropy bound on the Bayes error.
//!
//! Entropies are in bits so the error bound is tight in the uniform binary
//! case. Zero-probability cells contribute zero by continuity.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("probability table must sum to 1 (got {0}) with no negative mass")]
    NotNormalized(f64),
    #[error("negative probability {0}")]
    NegativeMass(f64),
    #[error("table of {cells} cells does not match alphabet sizes {dims:?}")]
    DimMismatch { cells: usize, dims: Vec<usize> },
    #[error("axis {0} out of range for a rank-{1} joint")]
    BadAxis(usize, usize),
    #[error("joint must have rank {need}, got {got}")]
    WrongRank { need: usize, got: usize },
}

const NORM_TOL: f64 = 1e-12;

/// A joint probability table over finitely many axes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self, InfoError> {
        let cells: usize = dims.iter().product();
        if cells != probs.len() || cells == 0 {
            return Err(InfoError::DimMismatch { cells: probs.len(), dims });
        }
        if let Some(&bad) = probs.iter().find(|&&p| p < 0.0) {
            return Err(InfoError::NegativeMass(bad));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(InfoError::NotNormalized(total));
        }
        Ok(Self { dims, probs })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn index_of(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    /// Iterate all cells as (multi-index, probability).
    fn cells(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let rank = self.dims.len();
        (0..self.probs.len()).map(move |flat| {
            let mut idx = vec![0; rank];
            let mut rest = flat;
            for axis in (0..rank).rev() {
                idx[axis] = rest % self.dims[axis];
                rest /= self.dims[axis];
            }
            (idx, self.probs[flat])
        })
    }

    /// Marginal mass on a subset of axes, as a map keyed by sub-index.
    fn marginal(&self, axes: &[usize]) -> Result<std::collections::HashMap<Vec<usize>, f64>, InfoError> {
        for &a in axes {
            if a >= self.dims.len() {
                return Err(InfoError::BadAxis(a, self.dims.len()));
            }
        }
        let mut out = std::collections::HashMap::new();
        for (idx, p) in self.cells() {
            let key: Vec<usize> = axes.iter().map(|&a| idx[a]).collect();
            *out.entry(key).or_insert(0.0) += p;
        }
        Ok(out)
    }

    /// Conditional entropy `H(target | given)` in bits:
    /// `-sum p(t,g) log2 p(t,g)/p(g)`, with empty-mass cells contributing 0.
    pub fn conditional_entropy(&self, target: &[usize], given: &[usize]) -> Result<f64, InfoError> {
        let mut joint_axes = given.to_vec();
        joint_axes.extend_from_slice(target);
        let joint = self.marginal(&joint_axes)?;
        let cond = self.marginal(given)?;
        let mut h = 0.0;
        for (key, &ptg) in joint.iter() {
            if ptg <= 0.0 {
                continue;
            }
            let pg = cond[&key[..given.len()].to_vec()];
            h -= ptg * (ptg / pg).log2();
        }
        Ok(h)
    }

    /// Plain entropy of a subset of axes, in bits.
    pub fn entropy(&self, axes: &[usize]) -> Result<f64, InfoError> {
        self.conditional_entropy(axes, &[])
    }

    fn require_rank(&self, need: usize) -> Result<(), InfoError> {
        if self.dims.len() != need {
            return Err(InfoError::WrongRank { need, got: self.dims.len() });
        }
        Ok(())
    }
}

/// The three quantities of the positional-information inequality over a
/// rank-3 joint with axes `(X, P, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalInformation {
    /// H(Y|X), bits.
    pub h_y_given_x: f64,
    /// H(Y|X,P), bits.
    pub h_y_given_xp: f64,
    /// Their gap, the conditional mutual information I(Y;P|X) >= 0.
    pub cmi: f64,
}

/// Conditioning on positions can only keep or reduce label uncertainty:
/// returns `(H(Y|X), H(Y|X,P), I(Y;P|X))` with the gap nonnegative, and
/// zero exactly when P and Y are conditionally independent given X.
pub fn positional_information(joint: &DiscreteJoint) -> Result<PositionalInformation, InfoError> {
    joint.require_rank(3)?;
    let h_y_given_x = joint.conditional_entropy(&[2], &[0])?;
    let h_y_given_xp = joint.conditional_entropy(&[2], &[0, 1])?;
    Ok(PositionalInformation { h_y_given_x, h_y_given_xp, cmi: h_y_given_x - h_y_given_xp })
}

/// The half-entropy bound over a rank-2 joint `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    /// Bayes error: expected mass off the posterior mode.
    pub bayes_error: f64,
    /// Half the conditional entropy H(Y|X) in bits.
    pub bound: f64,
    pub holds: bool,
}

/// Bayes classification error versus half the conditional entropy.
pub fn half_entropy_bound(joint: &DiscreteJoint) -> Result<ErrorBound, InfoError> {
    joint.require_rank(2)?;
    let (nx, ny) = (joint.dims[0], joint.dims[1]);
    let mut bayes_error = 0.0;
    for x in 0..nx {
        let row: Vec<f64> = (0..ny).map(|y| joint.probs[joint.index_of(&[x, y])]).collect();
        let px: f64 = row.iter().sum();
        if px > 0.0 {
            let max = row.iter().copied().fold(0.0, f64::max);
            bayes_error += px - max;
        }
    }
    let bound = 0.5 * joint.conditional_entropy(&[1], &[0])?;
    Ok(ErrorBound { bayes_error, bound, holds: bayes_error <= bound + 1e-12 })
}

/// A random joint from symmetric unit-rate exponential weights (flat
/// Dirichlet over the simplex).
pub fn random_joint<R: rand::Rng>(dims: Vec<usize>, rng: &mut R) -> DiscreteJoint {
    let cells: usize = dims.iter().product();
    let mut mass: Vec<f64> = (0..cells)
        .map(|_| -(rng.random_range(f64::MIN_POSITIVE..1.0f64)).ln())
        .collect();
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    // renormalize exactly against accumulated rounding
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    DiscreteJoint::new(dims, mass).expect("normalized by construction")
}

/// A rank-3 joint in which P and Y are conditionally independent given X:
/// `p(x,p,y) = p(x) p(p|x) p(y|x)` built from random factors.
pub fn conditionally_independent_joint<R: rand::Rng>(
    nx: usize,
    np: usize,
    ny: usize,
    rng: &mut R,
) -> DiscreteJoint {
    let simplex = |k: usize, rng: &mut R| -> Vec<f64> {
        let mut v: Vec<f64> =
            (0..k).map(|_| -(rng.random_range(f64::MIN_POSITIVE..1.0f64)).ln()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    };
    let px = simplex(nx, rng);
    let p_given: Vec<Vec<f64>> = (0..nx).map(|_| simplex(np, rng)).collect();
    let y_given: Vec<Vec<f64>> = (0..nx).map(|_| simplex(ny, rng)).collect();
    let mut probs = Vec::with_capacity(nx * np * ny);
    for x in 0..nx {
        for p in 0..np {
            for y in 0..ny {
                probs.push(px[x] * p_given[x][p] * y_given[x][y]);
            }
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    DiscreteJoint::new(vec![nx, np, ny], probs).expect("normalized by construction")
}
