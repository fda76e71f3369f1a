//! Dense row-major tensors and trainable parameters.
//!
//! The tensor here is deliberately small: an owned `Vec<f64>` plus a shape,
//! always contiguous, always row-major (last axis fastest). Nothing in the
//! crate depends on views, broadcasting rules beyond scalars, or implicit
//! dtype changes, and keeping the layout fixed is what lets the convolution
//! kernels, the checkpoint format and the entropy coder all agree on byte
//! order without translation layers.
//!
//! There is no automatic differentiation tape. Layers implement explicit
//! forward and backward passes, and [`Parameter`] pairs each weight tensor
//! with a gradient accumulator that those backward passes add into.

use crate::error::{Error, Result};

/// Contiguous row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Tag for the shared elementwise entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

/// Tag for the shared reduction entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ZeroExtent {
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    /// Builds a tensor from explicit contents. The data length must match the
    /// shape product and every extent must be positive.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ReshapeCount {
                from: vec![data.len()],
                to: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        })
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of range for axis {i} ({dim})");
            off = off * dim + ix;
        }
        off
    }

    /// Element read by multi-index; intended for tests and small oracles,
    /// hot loops index `data()` directly.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the shape without touching the data. Metadata-only: the
    /// backing buffer moves, it is never copied.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ReshapeCount {
                from: self.shape.clone(),
                to: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Clone-then-reshape convenience for when the original must survive.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        self.clone().reshape(shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    /// In-place `self += other`, shape-checked.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place `self += s * other`, shape-checked.
    pub fn add_scaled(&mut self, other: &Tensor, s: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_scaled",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(EwOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(EwOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(EwOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(EwOp::Div, self, other)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.numel() as f64
    }

    pub fn max_all(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Errors if any element is NaN or infinite. `context` names the
    /// operation boundary for the error message.
    pub fn assert_finite(&self, context: &str) -> Result<()> {
        for &x in &self.data {
            if !x.is_finite() {
                return Err(Error::non_finite(context));
            }
        }
        Ok(())
    }
}

/// Shared elementwise entry point. Operands must have identical shapes,
/// except that either side may be a single-element tensor, which broadcasts.
/// Non-finite inputs are rejected so NaN and infinity cannot cross an op
/// boundary unnoticed; division checks its divisors up front.
pub fn elementwise(op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.assert_finite("elementwise lhs")?;
    b.assert_finite("elementwise rhs")?;
    let apply = |x: f64, y: f64| match op {
        EwOp::Add => x + y,
        EwOp::Sub => x - y,
        EwOp::Mul => x * y,
        EwOp::Div => x / y,
        EwOp::Max => x.max(y),
    };
    if op == EwOp::Div && b.data.iter().any(|&y| y == 0.0) {
        return Err(Error::DivisionByZero { op: "elementwise" });
    }
    let out = if a.shape == b.shape {
        Tensor {
            shape: a.shape.clone(),
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| apply(x, y))
                .collect(),
        }
    } else if b.numel() == 1 {
        let y = b.data[0];
        Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|&x| apply(x, y)).collect(),
        }
    } else if a.numel() == 1 {
        let x = a.data[0];
        Tensor {
            shape: b.shape.clone(),
            data: b.data.iter().map(|&y| apply(x, y)).collect(),
        }
    } else {
        return Err(Error::ShapeMismatch {
            op: "elementwise",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    };
    out.assert_finite("elementwise result")?;
    Ok(out)
}

/// Shared reduction entry point over an explicit axis list.
///
/// An empty axis list is an identity copy. Axes must be in range and free of
/// repeats. With `keepdims` the reduced axes stay as extent-1 axes, otherwise
/// they are dropped (a full reduction collapses to shape `[1]`). Mean is
/// computed as sum divided by the reduced element count.
pub fn reduce(op: Reduce, x: &Tensor, axes: &[usize], keepdims: bool) -> Result<Tensor> {
    if axes.is_empty() {
        return Ok(x.clone());
    }
    let ndim = x.ndim();
    let mut seen = vec![false; ndim];
    for &ax in axes {
        if ax >= ndim || seen[ax] {
            return Err(Error::InvalidAxis { axis: ax, ndim });
        }
        seen[ax] = true;
    }
    let mut out_shape: Vec<usize> = Vec::new();
    for (i, &dim) in x.shape.iter().enumerate() {
        if seen[i] {
            if keepdims {
                out_shape.push(1);
            }
        } else {
            out_shape.push(dim);
        }
    }
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let out_numel: usize = out_shape.iter().product();
    let init = match op {
        Reduce::Sum | Reduce::Mean => 0.0,
        Reduce::Max => f64::NEG_INFINITY,
    };
    let mut out = vec![init; out_numel];

    // Row-major walk over the input, tracking the output offset incrementally.
    let mut kept_strides = vec![0usize; ndim];
    let mut stride = 1usize;
    for i in (0..ndim).rev() {
        if !seen[i] {
            kept_strides[i] = stride;
            stride *= x.shape[i];
        }
    }
    let mut idx = vec![0usize; ndim];
    for &v in &x.data {
        let mut off = 0;
        for i in 0..ndim {
            if !seen[i] {
                off += idx[i] * kept_strides[i];
            }
        }
        match op {
            Reduce::Sum | Reduce::Mean => out[off] += v,
            Reduce::Max => {
                if v > out[off] {
                    out[off] = v;
                }
            }
        }
        for i in (0..ndim).rev() {
            idx[i] += 1;
            if idx[i] < x.shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    if op == Reduce::Mean {
        let count: usize = axes.iter().map(|&ax| x.shape[ax]).product();
        let inv = count as f64;
        for v in &mut out {
            *v /= inv;
        }
    }
    Tensor::new(&out_shape, out)
}

/// A tensor of trainable weights paired with its gradient accumulator.
///
/// The id is the parameter's registry name: a stable dotted path assigned at
/// model construction. Checkpoints serialize parameters in registry order and
/// key them by this id, and the squeeze-excitation weight penalty selects its
/// targets by id, so ids are part of the on-disk contract.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(id: impl Into<String>, value: Tensor) -> Parameter {
        let grad = Tensor::zeros(value.shape()).expect("parameter shape already validated");
        Parameter {
            id: id.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }

    /// Adds `g` into the accumulator; shapes must match.
    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "gradient accumulate",
                left: self.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        self.grad.add_assign(g)
    }
}

/// Anything owning an ordered parameter registry. The visit order is the
/// registry order: fixed across runs, used for init, checkpoints and the
/// optimizer state.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.numel());
        n
    }

    fn param_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        self.visit(&mut |p| ids.push(p.id.clone()));
        ids
    }
}
