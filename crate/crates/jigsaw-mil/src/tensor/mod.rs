//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: a [`Tape`] records operations eagerly
//! (values are computed as the graph is built) and [`Tape::backward`] replays
//! them in reverse to accumulate adjoints. Tapes live for one forward/backward
//! pass and are dropped afterwards; parameters are plain [`Tensor`]s bound as
//! leaves at the start of every pass.
//!
//! Everything is generic over [`Scalar`] so verification suites can run in
//! `f64` while training runs in `f32`.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, random_case, Primitive, ALL_PRIMITIVES};
pub use tape::{NodeId, Tape};

use thiserror::Error;

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: domain violation: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Element type of the engine: `f32` for training, `f64` for verification.
pub trait Scalar:
    num_traits::Float + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// C += op(A) * op(B) with row-major storage, dispatched to a packed GEMM.
    ///
    /// `a` is stored `[ar, ac]`; when `at` it is used as its transpose, and
    /// likewise for `b`. `c` is `[m, n]` row-major and is accumulated into
    /// when `acc` is set, overwritten otherwise.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        at: bool,
        b: &[Self],
        bt: bool,
        c: &mut [Self],
        acc: bool,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                at: bool,
                b: &[Self],
                bt: bool,
                c: &mut [Self],
                acc: bool,
            ) {
                assert_eq!(a.len(), m * k);
                assert_eq!(b.len(), k * n);
                assert_eq!(c.len(), m * n);
                // Row/col strides for the logical [m,k] view of a (stored
                // [m,k], or [k,m] when transposed), and likewise for b.
                let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
                let beta = if acc { 1.0 as $t } else { 0.0 as $t };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0 as $t,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// A dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidArg {
                op: "tensor",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![T::zero(); numel] }
    }

    pub fn scalar(x: T) -> Self {
        Self { shape: vec![1], data: vec![x] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(TensorError::InvalidArg { op: "tensor", detail: "no rows".into() });
        }
        let c = rows[0].len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                detail: "ragged rows".into(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row `i` of a tensor whose leading axis indexes rows.
    pub fn row(&self, i: usize) -> &[T] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Stride of the leading axis (product of trailing extents).
    pub fn row_stride(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|x| x.to_f64())
    }

    /// Largest elementwise absolute difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
}
