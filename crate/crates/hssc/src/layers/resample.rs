//! Nearest-neighbor upsampling.
//!
//! Replicates each pixel into an `f x f` block. The backward pass is the
//! adjoint: each input-gradient pixel is the sum over its block.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn nn_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "nn_upsample",
            left: vec![3],
            right: x.shape().to_vec(),
        });
    }
    if factor == 0 {
        return Err(Error::config("upsample factor must be positive"));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; c * oh * ow];
    let xd = x.data();
    for ch in 0..c {
        for oy in 0..oh {
            let iy = oy / factor;
            let src = &xd[ch * h * w + iy * w..ch * h * w + (iy + 1) * w];
            let dst = &mut out[ch * oh * ow + oy * ow..ch * oh * ow + (oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / factor];
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn nn_upsample_backward(dy: &Tensor, factor: usize, in_shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h * factor, w * factor);
    if dy.shape() != [c, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "nn_upsample backward",
            left: vec![c, oh, ow],
            right: dy.shape().to_vec(),
        });
    }
    let mut dx = vec![0.0; c * h * w];
    let dyd = dy.data();
    for ch in 0..c {
        for oy in 0..oh {
            let iy = oy / factor;
            let src = &dyd[ch * oh * ow + oy * ow..ch * oh * ow + (oy + 1) * ow];
            let dst = &mut dx[ch * h * w + iy * w..ch * h * w + (iy + 1) * w];
            for (ox, &g) in src.iter().enumerate() {
                dst[ox / factor] += g;
            }
        }
    }
    Tensor::new(in_shape, dx)
}
