//! Permutations of bag instances: the shuffling operator, its inverse, and
//! the permutation-matrix algebra behind the invariance suite.
//!
//! Conventions: `apply(x)` returns the tensor whose row `i` is row `sigma(i)`
//! of `x`, i.e. left-multiplication by the matrix with `P[i][sigma(i)] = 1`.
//! That matrix is orthonormal, so its transpose inverts the shuffle.

use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PermError {
    #[error("permutation over an empty set is rejected")]
    Empty,
    #[error("indices are not a bijection on 0..{n}: {detail}")]
    NotBijective { n: usize, detail: String },
    #[error("permutation length {len} does not match {rows} rows")]
    LengthMismatch { len: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    sigma: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { sigma: (0..n).collect() }
    }

    pub fn from_indices(sigma: Vec<usize>) -> Result<Self, PermError> {
        let n = sigma.len();
        if n == 0 {
            return Err(PermError::Empty);
        }
        let mut seen = vec![false; n];
        for &i in &sigma {
            if i >= n {
                return Err(PermError::NotBijective { n, detail: format!("index {i} out of range") });
            }
            if seen[i] {
                return Err(PermError::NotBijective { n, detail: format!("index {i} repeated") });
            }
            seen[i] = true;
        }
        Ok(Self { sigma })
    }

    /// Uniform sample from the symmetric group via Fisher–Yates.
    pub fn sample<R: Rng>(n: usize, rng: &mut R) -> Result<Self, PermError> {
        if n == 0 {
            return Err(PermError::Empty);
        }
        let mut sigma: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            sigma.swap(i, j);
        }
        Ok(Self { sigma })
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.sigma
    }

    pub fn is_identity(&self) -> bool {
        self.sigma.iter().enumerate().all(|(i, &s)| i == s)
    }

    /// Shuffle the leading axis: output row `i` is input row `sigma(i)`.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, PermError> {
        let rows = x.shape()[0];
        if rows != self.n() {
            return Err(PermError::LengthMismatch { len: self.n(), rows });
        }
        let stride = x.row_stride();
        let mut data = Vec::with_capacity(x.numel());
        for &s in &self.sigma {
            data.extend_from_slice(&x.data()[s * stride..(s + 1) * stride]);
        }
        Ok(Tensor::new(x.shape().to_vec(), data).expect("shape preserved"))
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0usize; self.n()];
        for (i, &s) in self.sigma.iter().enumerate() {
            inv[s] = i;
        }
        Self { sigma: inv }
    }

    /// Composition such that `compose(a, b).apply(x) == a.apply(&b.apply(x))`.
    pub fn compose(a: &Self, b: &Self) -> Self {
        assert_eq!(a.n(), b.n(), "compose: size mismatch");
        Self { sigma: a.sigma.iter().map(|&i| b.sigma[i]).collect() }
    }

    /// The n-by-n matrix form: `P[i][j] = 1` iff `j = sigma(i)`.
    pub fn to_matrix<T: Scalar>(&self) -> Tensor<T> {
        let n = self.n();
        let mut data = vec![T::zero(); n * n];
        for (i, &s) in self.sigma.iter().enumerate() {
            data[i * n + s] = T::one();
        }
        Tensor::new(vec![n, n], data).expect("square")
    }
}
