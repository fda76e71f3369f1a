//! Elementwise activations.
//!
//! These are free functions rather than layer structs because they carry no
//! parameters; callers keep the forward input (or output, for the sigmoid)
//! as the backward cache. At exactly zero the rectifiers use subgradient 0.

use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `dy * 1[x > 0]`, with `x` the forward input.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), dy.shape());
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    debug_assert_eq!(x.shape(), dy.shape());
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g *= slope;
        }
    }
    out
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `dy * y * (1 - y)`, with `y` the forward output.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), dy.shape());
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(y.data()) {
        *g *= v * (1.0 - v);
    }
    out
}
