//! Dense float tensors and the reverse-mode autodiff tape built on them.
//!
//! Tensors are generic over [`Element`] so the same kernels run in `f32`
//! (the production path) and `f64` (the shadow path used by gradient checks).

mod gradcheck;
mod ops;
mod rng;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use gradcheck::{check_against, grad_check, Evaluation, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{add, concat_channels, mean, mul, relu, sigmoid, split_channels, sum};
pub use rng::{Rng, RngCursor, Stream};
pub use tape::{BackwardOp, Gradients, ParamId, ParamStore, Tape, Var};

/// Floating point element type a [`Tensor`] can hold.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + AddAssign + 'static
{
    const NAME: &'static str;

    /// `c = a * b + beta * c` for row/column strided operands.
    ///
    /// `a` is `m x k` with strides `sa`, `b` is `k x n` with strides `sb` and
    /// `c` is a contiguous row-major `m x n` buffer.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Element")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Element converts to f64")
    }
}

fn check_gemm_extents(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    sa: (isize, isize),
    b_len: usize,
    sb: (isize, isize),
    c_len: usize,
) {
    let last = |rows: usize, cols: usize, s: (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize + 1
        }
    };
    assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0);
    assert!(last(m, k, sa) <= a_len, "gemm: lhs buffer too small");
    assert!(last(k, n, sb) <= b_len, "gemm: rhs buffer too small");
    assert!(m * n <= c_len, "gemm: output buffer too small");
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (isize, isize),
        b: &[f32],
        sb: (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm_extents(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: extents checked above; c is contiguous row-major m x n.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (isize, isize),
        b: &[f64],
        sb: (isize, isize),
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm_extents(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: extents checked above; c is contiguous row-major m x n.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// Dense row-major tensor of rank 1 to 4.
///
/// Convolutional tensors use `[batch, channel, height, width]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!(
            "rank must be between 1 and 4, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!(
            "every extent must be at least 1, got shape {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Self::new(shape, vec![value; len])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// I.i.d. Gaussian samples drawn from `rng`.
    pub fn randn(shape: &[usize], rng: &mut Rng, mean: f64, std: f64) -> Result<Self> {
        let len = validate_shape(shape)?;
        let data = (0..len)
            .map(|_| T::from_f64_lossy(mean + std * rng.standard_normal()))
            .collect();
        Self::new(shape, data)
    }

    /// Uniform samples in `[low, high)`.
    pub fn rand_uniform(shape: &[usize], rng: &mut Rng, low: f64, high: f64) -> Result<Self> {
        let len = validate_shape(shape)?;
        let data = (0..len)
            .map(|_| T::from_f64_lossy(low + (high - low) * rng.uniform()))
            .collect();
        Self::new(shape, data)
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == [1]
    }

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Splits a rank-4 shape into `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected a rank-4 [N,C,H,W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    /// Accumulated gradient, shaped like the tensor itself.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.grad.as_ref().map(|g| Tensor {
            shape: self.shape.clone(),
            data: g.clone(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn grad_data(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient slot, creating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} does not match tensor of shape {:?}",
                delta.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += *d),
            None => self.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Converts the element type. Gradients are not carried over.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot compare shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    /// Stacks rank-4 tensors along the batch axis.
    pub fn stack_batch(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let (_, c, h, w) = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pc, ph, pw) != (c, h, w) {
                return Err(Error::shape(format!(
                    "cannot stack {:?} onto [_,{c},{h},{w}]",
                    p.shape
                )));
            }
            n += pn;
            data.extend_from_slice(&p.data);
        }
        Self::new(&[n, c, h, w], data)
    }

    /// Extracts batch item `index` of a rank-4 tensor as `[1, C, H, W]`.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if index >= n {
            return Err(Error::shape(format!(
                "batch index {index} out of range for batch of {n}"
            )));
        }
        let plane = c * h * w;
        Self::from_slice(&[1, c, h, w], &self.data[index * plane..(index + 1) * plane])
    }
}

impl<T: Element> Tensor<T> {
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }
}
