//! Dense row-major tensors over f32 (training) or f64 (verification).

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::rc::Rc;

use crate::error::{CoreError, Result};

/// Element type for tensors. Training runs in f32; gradient verification in f64.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            fn minimum(self, other: Self) -> Self {
                if self < other {
                    self
                } else {
                    other
                }
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

#[derive(Debug)]
struct Inner<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// Immutable n-dimensional array, row-major, cheap to clone.
///
/// Once constructed the buffer never changes; parameter updates replace the
/// whole tensor. This is what makes recorded computation graphs safe to
/// replay during the backward pass.
#[derive(Clone)]
pub struct Tensor<S> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Build from a shape and a row-major buffer. Lengths must agree.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            expected,
            data.len(),
            "tensor shape {:?} expects {} elements, got {}",
            shape,
            expected,
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner { shape: shape.to_vec(), data }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, S::ZERO)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: S) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[S] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(CoreError::Shape {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", self.shape(), shape),
            });
        }
        Ok(Tensor {
            inner: Rc::new(Inner { shape: shape.to_vec(), data: self.inner.data.clone() }),
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor::from_vec(self.shape(), self.data().iter().map(|&x| f(x)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }

    /// Elementwise sum of two same-shape tensors (gradient accumulation).
    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        Tensor::from_vec(
            self.shape(),
            self.data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    /// Require a 2-d shape, returning (rows, cols).
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [a, b] => Ok((*a, *b)),
            s => Err(CoreError::Shape { op, msg: format!("expected 2-d tensor, got {s:?}") }),
        }
    }

    /// Require a 4-d shape, returning (batch, channels, height, width).
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            [a, b, c, d] => Ok((*a, *b, *c, *d)),
            s => Err(CoreError::Shape { op, msg: format!("expected 4-d tensor, got {s:?}") }),
        }
    }

    /// Row-wise argmax for a 2-d tensor. Ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let (rows, cols) = self.dims2("argmax_rows").expect("argmax_rows: 2-d tensor");
        let data = self.data();
        (0..rows)
            .map(|r| {
                let row = &data[r * cols..(r + 1) * cols];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.shape(),
            self.data().iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        )
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.inner.shape)?;
        if self.inner.data.len() <= 8 {
            write!(f, " {:?}", self.inner.data)?;
        }
        Ok(())
    }
}
