// SPDX-License-Identifier: Apache-2.0

//! Small deterministic tensor and layer library with hand-written backward
//! passes, generic over `f32` (training) and `f64` (gradient checks).

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

pub use layers::{AvgPool2d, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Relu, ResidualBlock};
pub use loss::{bce_with_logits, sigmoid};
pub use optim::Adam;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("batch error: {0}")]
    Batch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type NnResult<T> = Result<T, NnError>;

/// Scalar type of the layer library.
pub trait Real:
    Float + Debug + Default + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    fn of(v: f64) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` over row-major buffers, with
    /// `op(a)` of shape `m x k` and `op(b)` of shape `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]);
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:ident) => {
        impl Real for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    matrixmultiply::$gemm(
                        m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, sgemm);
impl_real!(f64, dgemm);

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self { dims: dims.to_vec(), data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> NnResult<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(NnError::Dim(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn filled(dims: &[usize], v: T) -> Self {
        Self { dims: dims.to_vec(), data: vec![v; dims.iter().product()] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|v| U::of(v.to_f64().unwrap_or(0.0))).collect() }
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn nchw(&self) -> NnResult<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(NnError::Dim(format!("expected N x C x H x W, got {:?}", self.dims))),
        }
    }

    /// Uniform draws in `[-bound, bound]`.
    pub fn uniform(dims: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect() }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> NnResult<Self> {
        let first = items.first().ok_or_else(|| NnError::Dim("cannot stack zero tensors".into()))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.dims != first.dims {
                return Err(NnError::Dim(format!("stack of {:?} and {:?}", first.dims, t.dims)));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims, data })
    }

    /// Row `i` of the leading axis.
    pub fn row(&self, i: usize) -> &[T] {
        let stride = self.len() / self.dims[0];
        &self.data[i * stride..(i + 1) * stride]
    }
}

/// Trainable tensor with its gradient and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self { value, grad: vec![T::zero(); n], m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named state reached while walking a module.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-trained state saved with checkpoints (batch-norm running stats).
    Buffer(&'a mut Tensor<T>),
}

pub type SlotList<'a, T> = Vec<(String, Slot<'a, T>)>;

/// A differentiable layer. `backward` consumes the activations cached by
/// the last `forward`, accumulates parameter gradients and returns the
/// gradient of the input.
pub trait Module<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> NnResult<Tensor<T>>;
    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>>;
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>);

    fn zero_grad(&mut self) {
        let mut s = Vec::new();
        self.slots("", &mut s);
        for (_, slot) in s {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        }
    }

    fn param_count(&mut self) -> usize {
        let mut s = Vec::new();
        self.slots("", &mut s);
        s.iter().map(|(_, slot)| if let Slot::Param(p) = slot { p.value.len() } else { 0 }).sum()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
