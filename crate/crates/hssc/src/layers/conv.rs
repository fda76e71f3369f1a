//! Strided convolutions, their transposed adjoints, and the 3D variants.
//!
//! All four layers share three low-level kernels. With `small` naming the
//! strided (coarse) side and `big` the dense side:
//!
//! * `gather`: `small[a, p] += sum W[a, b, k] * big[b, m(p, k)]`
//! * `scatter`: `big[b, m(p, k)] += W[a, b, k] * small[a, p]`
//! * `outer`: `dW[a, b, k] += sum_p small[a, p] * big[b, m(p, k)]`
//!
//! where `m(p, k) = p * stride + k - pad`. A convolution is gather on the
//! forward pass and scatter for its input gradient; a transposed convolution
//! is the other way around. Because both directions run through the same
//! index map, the transposed convolution is the exact linear adjoint of the
//! convolution that shares its weights, not merely something shaped like one.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

/// Geometry of one spatial axis.
#[derive(Debug, Clone, Copy)]
struct Axis {
    big: usize,
    small: usize,
    k: usize,
    stride: usize,
    pad_before: usize,
}

/// Ceil-mode "same" geometry: `small = ceil(big / stride)`, padding split
/// with the extra zero after.
fn same_axis(big: usize, k: usize, stride: usize) -> Axis {
    let small = big.div_ceil(stride);
    let rem = big % stride;
    let overlap = if rem == 0 { stride } else { rem };
    let total = k.saturating_sub(overlap);
    Axis {
        big,
        small,
        k,
        stride,
        pad_before: total / 2,
    }
}

/// Valid loop range over the small side for kernel offset `k`: every `p` in
/// `lo..hi` maps inside the big side.
fn span(a: &Axis, k: usize) -> (usize, usize) {
    let shift = k as i64 - a.pad_before as i64;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(a.stride)
    };
    let max_i = a.big as i64 - 1 - shift;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = (max_i as usize / a.stride + 1).min(a.small);
    (lo.min(hi), hi)
}

fn uniform_fan_in(rng: &mut Prng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.range(-bound, bound)).collect()
}

// 2D kernels. Weight layout [A, B, kh, kw], small [A, h, w], big [B, H, W].
// Each channel pair delegates to the single-plane primitives shared with the
// 3D path.

fn gather2(w: &[f64], a_n: usize, b_n: usize, big: &[f64], small: &mut [f64], ay: &Axis, ax: &Axis) {
    let taps = ay.k * ax.k;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            let w_base = (ia * b_n + ib) * taps;
            gather2_plane(
                &w[w_base..w_base + taps],
                &big[ib * big_plane..(ib + 1) * big_plane],
                &mut small[ia * small_plane..(ia + 1) * small_plane],
                ay,
                ax,
            );
        }
    }
}

fn scatter2(
    w: &[f64],
    a_n: usize,
    b_n: usize,
    small: &[f64],
    big: &mut [f64],
    ay: &Axis,
    ax: &Axis,
) {
    let taps = ay.k * ax.k;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            let w_base = (ia * b_n + ib) * taps;
            scatter2_plane(
                &w[w_base..w_base + taps],
                &small[ia * small_plane..(ia + 1) * small_plane],
                &mut big[ib * big_plane..(ib + 1) * big_plane],
                ay,
                ax,
            );
        }
    }
}

fn outer2(
    small: &[f64],
    a_n: usize,
    big: &[f64],
    b_n: usize,
    dw: &mut [f64],
    ay: &Axis,
    ax: &Axis,
) {
    let taps = ay.k * ax.k;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            let w_base = (ia * b_n + ib) * taps;
            outer2_plane(
                &small[ia * small_plane..(ia + 1) * small_plane],
                &big[ib * big_plane..(ib + 1) * big_plane],
                &mut dw[w_base..w_base + taps],
                ay,
                ax,
            );
        }
    }
}

// 3D kernels. Depth runs at stride 1; weight [A, B, kd, kh, kw],
// small [A, D, h, w], big [B, D, H, W].

#[allow(clippy::too_many_arguments)]
fn gather3(
    w: &[f64],
    a_n: usize,
    b_n: usize,
    big: &[f64],
    small: &mut [f64],
    az: &Axis,
    ay: &Axis,
    ax: &Axis,
) {
    let kd = az.k;
    let small_vol = az.small * ay.small * ax.small;
    let big_vol = az.big * ay.big * ax.big;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            for kz in 0..kd {
                let (od_lo, od_hi) = span(az, kz);
                let w_slice_base = ((ia * b_n + ib) * kd + kz) * ay.k * ax.k;
                for od in od_lo..od_hi {
                    let id = od * az.stride + kz - az.pad_before;
                    let small_off = ia * small_vol + od * small_plane;
                    let big_off = ib * big_vol + id * big_plane;
                    gather2_plane(
                        &w[w_slice_base..w_slice_base + ay.k * ax.k],
                        &big[big_off..big_off + big_plane],
                        &mut small[small_off..small_off + small_plane],
                        ay,
                        ax,
                    );
                }
            }
        }
    }
}

fn gather2_plane(w: &[f64], big: &[f64], small: &mut [f64], ay: &Axis, ax: &Axis) {
    for ky in 0..ay.k {
        let (oy_lo, oy_hi) = span(ay, ky);
        for kx in 0..ax.k {
            let wv = w[ky * ax.k + kx];
            if wv == 0.0 {
                continue;
            }
            let (ox_lo, ox_hi) = span(ax, kx);
            if ox_lo >= ox_hi {
                continue;
            }
            for oy in oy_lo..oy_hi {
                let iy = oy * ay.stride + ky - ay.pad_before;
                let srow = oy * ax.small;
                let brow = iy * ax.big;
                if ax.stride == 1 {
                    let ix0 = ox_lo + kx - ax.pad_before;
                    let n = ox_hi - ox_lo;
                    let dst = &mut small[srow + ox_lo..srow + ox_lo + n];
                    let src = &big[brow + ix0..brow + ix0 + n];
                    for j in 0..n {
                        dst[j] += wv * src[j];
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        let ix = ox * ax.stride + kx - ax.pad_before;
                        small[srow + ox] += wv * big[brow + ix];
                    }
                }
            }
        }
    }
}

fn scatter2_plane(w: &[f64], small: &[f64], big: &mut [f64], ay: &Axis, ax: &Axis) {
    for ky in 0..ay.k {
        let (oy_lo, oy_hi) = span(ay, ky);
        for kx in 0..ax.k {
            let wv = w[ky * ax.k + kx];
            if wv == 0.0 {
                continue;
            }
            let (ox_lo, ox_hi) = span(ax, kx);
            if ox_lo >= ox_hi {
                continue;
            }
            for oy in oy_lo..oy_hi {
                let iy = oy * ay.stride + ky - ay.pad_before;
                let srow = oy * ax.small;
                let brow = iy * ax.big;
                if ax.stride == 1 {
                    let ix0 = ox_lo + kx - ax.pad_before;
                    let n = ox_hi - ox_lo;
                    let src = &small[srow + ox_lo..srow + ox_lo + n];
                    let dst = &mut big[brow + ix0..brow + ix0 + n];
                    for j in 0..n {
                        dst[j] += wv * src[j];
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        let ix = ox * ax.stride + kx - ax.pad_before;
                        big[brow + ix] += wv * small[srow + ox];
                    }
                }
            }
        }
    }
}

fn outer2_plane(small: &[f64], big: &[f64], dw: &mut [f64], ay: &Axis, ax: &Axis) {
    for ky in 0..ay.k {
        let (oy_lo, oy_hi) = span(ay, ky);
        for kx in 0..ax.k {
            let (ox_lo, ox_hi) = span(ax, kx);
            if ox_lo >= ox_hi {
                continue;
            }
            let mut acc = 0.0;
            for oy in oy_lo..oy_hi {
                let iy = oy * ay.stride + ky - ay.pad_before;
                let srow = oy * ax.small;
                let brow = iy * ax.big;
                if ax.stride == 1 {
                    let ix0 = ox_lo + kx - ax.pad_before;
                    let n = ox_hi - ox_lo;
                    let s = &small[srow + ox_lo..srow + ox_lo + n];
                    let b = &big[brow + ix0..brow + ix0 + n];
                    for j in 0..n {
                        acc += s[j] * b[j];
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        let ix = ox * ax.stride + kx - ax.pad_before;
                        acc += small[srow + ox] * big[brow + ix];
                    }
                }
            }
            dw[ky * ax.k + kx] += acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter3(
    w: &[f64],
    a_n: usize,
    b_n: usize,
    small: &[f64],
    big: &mut [f64],
    az: &Axis,
    ay: &Axis,
    ax: &Axis,
) {
    let kd = az.k;
    let small_vol = az.small * ay.small * ax.small;
    let big_vol = az.big * ay.big * ax.big;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            for kz in 0..kd {
                let (od_lo, od_hi) = span(az, kz);
                let w_slice_base = ((ia * b_n + ib) * kd + kz) * ay.k * ax.k;
                for od in od_lo..od_hi {
                    let id = od * az.stride + kz - az.pad_before;
                    let small_off = ia * small_vol + od * small_plane;
                    let big_off = ib * big_vol + id * big_plane;
                    scatter2_plane(
                        &w[w_slice_base..w_slice_base + ay.k * ax.k],
                        &small[small_off..small_off + small_plane],
                        &mut big[big_off..big_off + big_plane],
                        ay,
                        ax,
                    );
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn outer3(
    small: &[f64],
    a_n: usize,
    big: &[f64],
    b_n: usize,
    dw: &mut [f64],
    az: &Axis,
    ay: &Axis,
    ax: &Axis,
) {
    let kd = az.k;
    let small_vol = az.small * ay.small * ax.small;
    let big_vol = az.big * ay.big * ax.big;
    let small_plane = ay.small * ax.small;
    let big_plane = ay.big * ax.big;
    for ia in 0..a_n {
        for ib in 0..b_n {
            for kz in 0..kd {
                let (od_lo, od_hi) = span(az, kz);
                let w_slice_base = ((ia * b_n + ib) * kd + kz) * ay.k * ax.k;
                for od in od_lo..od_hi {
                    let id = od * az.stride + kz - az.pad_before;
                    let small_off = ia * small_vol + od * small_plane;
                    let big_off = ib * big_vol + id * big_plane;
                    outer2_plane(
                        &small[small_off..small_off + small_plane],
                        &big[big_off..big_off + big_plane],
                        &mut dw[w_slice_base..w_slice_base + ay.k * ax.k],
                        ay,
                        ax,
                    );
                }
            }
        }
    }
}

/// Strided 2D convolution over `[C_in, H, W]`, cross-correlation convention,
/// ceil-mode same padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut Prng,
        id: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Conv2d {
        let fan_in = c_in * k * k;
        let wdata = uniform_fan_in(rng, fan_in, c_out * c_in * k * k);
        Conv2d {
            weight: Parameter::new(
                format!("{id}.weight"),
                Tensor::new(&[c_out, c_in, k, k], wdata).expect("conv weight shape"),
            ),
            bias: Parameter::new(
                format!("{id}.bias"),
                Tensor::zeros(&[c_out]).expect("conv bias shape"),
            ),
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn axes(&self, h: usize, w: usize) -> (Axis, Axis) {
        let k = self.kernel();
        (same_axis(h, k, self.stride), same_axis(w, k, self.stride))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 3 || x.shape()[0] != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: vec![self.c_in()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("conv2d input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ay, ax) = self.axes(h, w);
        let (c_out, plane) = (self.c_out(), ay.small * ax.small);
        let mut out = vec![0.0; c_out * plane];
        for (oc, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(self.bias.value.data()[oc]);
        }
        gather2(
            self.weight.value.data(),
            c_out,
            self.c_in(),
            x.data(),
            &mut out,
            &ay,
            &ax,
        );
        let y = Tensor::new(&[c_out, ay.small, ax.small], out)?;
        y.assert_finite("conv2d output")?;
        Ok(y)
    }

    /// Accumulates weight and bias gradients, returns the input gradient.
    /// `x` must be the exact forward input.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ay, ax) = self.axes(h, w);
        let expected = [self.c_out(), ay.small, ax.small];
        if dy.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv2d backward",
                left: expected.to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let plane = ay.small * ax.small;
        for (oc, chunk) in dy.data().chunks(plane).enumerate() {
            self.bias.grad.data_mut()[oc] += chunk.iter().sum::<f64>();
        }
        outer2(
            dy.data(),
            self.c_out(),
            x.data(),
            self.c_in(),
            self.weight.grad.data_mut(),
            &ay,
            &ax,
        );
        let mut dx = vec![0.0; x.numel()];
        scatter2(
            self.weight.value.data(),
            self.c_out(),
            self.c_in(),
            dy.data(),
            &mut dx,
            &ay,
            &ax,
        );
        Tensor::new(x.shape(), dx)
    }
}

/// Transposed 2D convolution: exact adjoint of [`Conv2d`] with shared
/// weights. Maps `[C_in, h, w]` to `[C_out, stride * h, stride * w]`.
/// Weight layout is `[C_in, C_out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvT2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
}

impl ConvT2d {
    pub fn new(
        rng: &mut Prng,
        id: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> ConvT2d {
        let fan_in = c_in * k * k;
        let wdata = uniform_fan_in(rng, fan_in, c_in * c_out * k * k);
        ConvT2d {
            weight: Parameter::new(
                format!("{id}.weight"),
                Tensor::new(&[c_in, c_out, k, k], wdata).expect("convT weight shape"),
            ),
            bias: Parameter::new(
                format!("{id}.bias"),
                Tensor::zeros(&[c_out]).expect("convT bias shape"),
            ),
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn axes(&self, h_in: usize, w_in: usize) -> (Axis, Axis) {
        let k = self.kernel();
        (
            same_axis(h_in * self.stride, k, self.stride),
            same_axis(w_in * self.stride, k, self.stride),
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 3 || x.shape()[0] != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "convT2d",
                left: vec![self.c_in()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("convT2d input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ay, ax) = self.axes(h, w);
        let plane = ay.big * ax.big;
        let mut out = vec![0.0; self.c_out() * plane];
        for (oc, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(self.bias.value.data()[oc]);
        }
        scatter2(
            self.weight.value.data(),
            self.c_in(),
            self.c_out(),
            x.data(),
            &mut out,
            &ay,
            &ax,
        );
        let y = Tensor::new(&[self.c_out(), ay.big, ax.big], out)?;
        y.assert_finite("convT2d output")?;
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ay, ax) = self.axes(h, w);
        let expected = [self.c_out(), ay.big, ax.big];
        if dy.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "convT2d backward",
                left: expected.to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let plane = ay.big * ax.big;
        for (oc, chunk) in dy.data().chunks(plane).enumerate() {
            self.bias.grad.data_mut()[oc] += chunk.iter().sum::<f64>();
        }
        outer2(
            x.data(),
            self.c_in(),
            dy.data(),
            self.c_out(),
            self.weight.grad.data_mut(),
            &ay,
            &ax,
        );
        let mut dx = vec![0.0; x.numel()];
        gather2(
            self.weight.value.data(),
            self.c_in(),
            self.c_out(),
            dy.data(),
            &mut dx,
            &ay,
            &ax,
        );
        Tensor::new(x.shape(), dx)
    }
}

/// 3D convolution over `[C_in, D, H, W]` volumes. Depth always runs at
/// stride 1 with same padding; the spatial stride is configurable.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
}

impl Conv3d {
    pub fn new(
        rng: &mut Prng,
        id: &str,
        c_in: usize,
        c_out: usize,
        kd: usize,
        k: usize,
        stride: usize,
    ) -> Conv3d {
        let fan_in = c_in * kd * k * k;
        let wdata = uniform_fan_in(rng, fan_in, c_out * c_in * kd * k * k);
        Conv3d {
            weight: Parameter::new(
                format!("{id}.weight"),
                Tensor::new(&[c_out, c_in, kd, k, k], wdata).expect("conv3d weight shape"),
            ),
            bias: Parameter::new(
                format!("{id}.bias"),
                Tensor::zeros(&[c_out]).expect("conv3d bias shape"),
            ),
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn axes(&self, d: usize, h: usize, w: usize) -> (Axis, Axis, Axis) {
        let (kd, k) = (self.weight.value.shape()[2], self.weight.value.shape()[3]);
        (
            same_axis(d, kd, 1),
            same_axis(h, k, self.stride),
            same_axis(w, k, self.stride),
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 4 || x.shape()[0] != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                left: vec![self.c_in()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("conv3d input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (az, ay, ax) = self.axes(d, h, w);
        let vol = az.small * ay.small * ax.small;
        let mut out = vec![0.0; self.c_out() * vol];
        for (oc, chunk) in out.chunks_mut(vol).enumerate() {
            chunk.fill(self.bias.value.data()[oc]);
        }
        gather3(
            self.weight.value.data(),
            self.c_out(),
            self.c_in(),
            x.data(),
            &mut out,
            &az,
            &ay,
            &ax,
        );
        let y = Tensor::new(&[self.c_out(), az.small, ay.small, ax.small], out)?;
        y.assert_finite("conv3d output")?;
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (az, ay, ax) = self.axes(d, h, w);
        let expected = [self.c_out(), az.small, ay.small, ax.small];
        if dy.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv3d backward",
                left: expected.to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let vol = az.small * ay.small * ax.small;
        for (oc, chunk) in dy.data().chunks(vol).enumerate() {
            self.bias.grad.data_mut()[oc] += chunk.iter().sum::<f64>();
        }
        outer3(
            dy.data(),
            self.c_out(),
            x.data(),
            self.c_in(),
            self.weight.grad.data_mut(),
            &az,
            &ay,
            &ax,
        );
        let mut dx = vec![0.0; x.numel()];
        scatter3(
            self.weight.value.data(),
            self.c_out(),
            self.c_in(),
            dy.data(),
            &mut dx,
            &az,
            &ay,
            &ax,
        );
        Tensor::new(x.shape(), dx)
    }
}

/// Transposed 3D convolution: adjoint of [`Conv3d`]. Depth is preserved,
/// spatial extents grow by the stride. Weight layout `[C_in, C_out, kd, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvT3d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
}

impl ConvT3d {
    pub fn new(
        rng: &mut Prng,
        id: &str,
        c_in: usize,
        c_out: usize,
        kd: usize,
        k: usize,
        stride: usize,
    ) -> ConvT3d {
        let fan_in = c_in * kd * k * k;
        let wdata = uniform_fan_in(rng, fan_in, c_in * c_out * kd * k * k);
        ConvT3d {
            weight: Parameter::new(
                format!("{id}.weight"),
                Tensor::new(&[c_in, c_out, kd, k, k], wdata).expect("convT3d weight shape"),
            ),
            bias: Parameter::new(
                format!("{id}.bias"),
                Tensor::zeros(&[c_out]).expect("convT3d bias shape"),
            ),
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn axes(&self, d: usize, h_in: usize, w_in: usize) -> (Axis, Axis, Axis) {
        let (kd, k) = (self.weight.value.shape()[2], self.weight.value.shape()[3]);
        (
            same_axis(d, kd, 1),
            same_axis(h_in * self.stride, k, self.stride),
            same_axis(w_in * self.stride, k, self.stride),
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 4 || x.shape()[0] != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "convT3d",
                left: vec![self.c_in()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("convT3d input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (az, ay, ax) = self.axes(d, h, w);
        let vol = az.big * ay.big * ax.big;
        let mut out = vec![0.0; self.c_out() * vol];
        for (oc, chunk) in out.chunks_mut(vol).enumerate() {
            chunk.fill(self.bias.value.data()[oc]);
        }
        // Depth is unstrided, so small and big depth extents coincide.
        scatter3(
            self.weight.value.data(),
            self.c_in(),
            self.c_out(),
            x.data(),
            &mut out,
            &az,
            &ay,
            &ax,
        );
        let y = Tensor::new(&[self.c_out(), az.big, ay.big, ax.big], out)?;
        y.assert_finite("convT3d output")?;
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (az, ay, ax) = self.axes(d, h, w);
        let expected = [self.c_out(), az.big, ay.big, ax.big];
        if dy.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "convT3d backward",
                left: expected.to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let vol = az.big * ay.big * ax.big;
        for (oc, chunk) in dy.data().chunks(vol).enumerate() {
            self.bias.grad.data_mut()[oc] += chunk.iter().sum::<f64>();
        }
        outer3(
            x.data(),
            self.c_in(),
            dy.data(),
            self.c_out(),
            self.weight.grad.data_mut(),
            &az,
            &ay,
            &ax,
        );
        let mut dx = vec![0.0; x.numel()];
        gather3(
            self.weight.value.data(),
            self.c_in(),
            self.c_out(),
            dy.data(),
            &mut dx,
            &az,
            &ay,
            &ax,
        );
        Tensor::new(x.shape(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{grad_check, GradCheckOpts};
    use crate::tensor::Parameters;

    fn rand_tensor(rng: &mut Prng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Independent quadruple-loop convolution used as the oracle. Pads
    /// explicitly, walks every output element, and never touches the
    /// production kernels.
    fn naive_conv2d(w: &Tensor, bias: &[f64], x: &Tensor, stride: usize) -> Tensor {
        let (c_out, c_in, kh, kw) = (
            w.shape()[0],
            w.shape()[1],
            w.shape()[2],
            w.shape()[3],
        );
        let (h, wid) = (x.shape()[1], x.shape()[2]);
        let oh = h.div_ceil(stride);
        let ow = wid.div_ceil(stride);
        let pad_y = {
            let rem = h % stride;
            let overlap = if rem == 0 { stride } else { rem };
            kh.saturating_sub(overlap) / 2
        };
        let pad_x = {
            let rem = wid % stride;
            let overlap = if rem == 0 { stride } else { rem };
            kw.saturating_sub(overlap) / 2
        };
        let mut out = Tensor::zeros(&[c_out, oh, ow]).unwrap();
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad_y as i64;
                                let ix = (ox * stride + kx) as i64 - pad_x as i64;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wid {
                                    acc += w.at(&[oc, ic, ky, kx])
                                        * x.at(&[ic, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[oc, oy, ox], acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        let mut rng = Prng::new(11);
        for &(c_in, c_out, k, s, h, w) in &[
            (1usize, 1usize, 1usize, 1usize, 5usize, 5usize),
            (2, 3, 3, 1, 6, 7),
            (3, 2, 3, 2, 8, 8),
            (2, 2, 7, 1, 9, 11),
            (2, 4, 4, 2, 10, 10),
            (1, 2, 4, 1, 7, 7),
            (2, 1, 3, 2, 9, 7),
        ] {
            let conv = Conv2d::new(&mut rng, "t", c_in, c_out, k, s);
            let x = rand_tensor(&mut rng, &[c_in, h, w]);
            let got = conv.forward(&x).unwrap();
            let want = naive_conv2d(&conv.weight.value, conv.bias.value.data(), &x, s);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} at k={k} s={s}");
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        let mut rng = Prng::new(0);
        let mut conv = Conv2d::new(&mut rng, "t", 1, 1, 1, 1);
        conv.weight.value.data_mut()[0] = 1.0;
        let x = rand_tensor(&mut rng, &[1, 4, 4]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_all_ones_3x3_frozen_example() {
        // 3x3 input 1..9, all-ones kernel, same padding. Window sums were
        // computed by hand.
        let mut rng = Prng::new(0);
        let mut conv = Conv2d::new(&mut rng, "t", 1, 1, 3, 1);
        conv.weight.value.data_mut().fill(1.0);
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(|i| i as f64).collect()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(
            y.data(),
            &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]
        );
    }

    #[test]
    fn conv2d_stride2_halves_spatial_extent() {
        let mut rng = Prng::new(1);
        let conv = Conv2d::new(&mut rng, "t", 2, 5, 3, 2);
        let x = rand_tensor(&mut rng, &[2, 96, 96]);
        assert_eq!(conv.forward(&x).unwrap().shape(), &[5, 48, 48]);
        let odd = rand_tensor(&mut rng, &[2, 97, 95]);
        assert_eq!(conv.forward(&odd).unwrap().shape(), &[5, 49, 48]);
    }

    #[test]
    fn convt2d_doubles_spatial_extent() {
        let mut rng = Prng::new(2);
        let up = ConvT2d::new(&mut rng, "t", 3, 2, 3, 2);
        let x = rand_tensor(&mut rng, &[3, 5, 7]);
        assert_eq!(up.forward(&x).unwrap().shape(), &[2, 10, 14]);
    }

    #[test]
    fn convt2d_delta_input_stamps_kernel() {
        let mut rng = Prng::new(3);
        let mut up = ConvT2d::new(&mut rng, "t", 1, 1, 3, 2);
        for (i, v) in up.weight.value.data_mut().iter_mut().enumerate() {
            *v = (i + 1) as f64;
        }
        let mut x = Tensor::zeros(&[1, 3, 3]).unwrap();
        x.set(&[0, 1, 1], 1.0);
        let y = up.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 6, 6]);
        // Stride 2, pad 0: the kernel lands at rows 2..5, cols 2..5.
        for ky in 0..3 {
            for kx in 0..3 {
                assert_eq!(y.at(&[0, 2 + ky, 2 + kx]), (ky * 3 + kx + 1) as f64);
            }
        }
        assert_eq!(y.at(&[0, 0, 0]), 0.0);
        assert_eq!(y.at(&[0, 5, 5]), 0.0);
    }

    #[test]
    fn convt2d_is_exact_adjoint_of_conv2d() {
        // <convT(W, u), v> == <u, conv(W, v)> with shared weights and zero
        // bias, for both parities and strides.
        let mut rng = Prng::new(4);
        for &(a, b, k, s, h, w) in &[
            (2usize, 3usize, 3usize, 2usize, 4usize, 6usize),
            (1, 1, 3, 2, 5, 5),
            (3, 2, 7, 1, 9, 9),
            (2, 2, 4, 2, 6, 8),
        ] {
            let up = ConvT2d::new(&mut rng, "t", a, b, k, s);
            let conv = Conv2d {
                weight: Parameter::new("w", up.weight.value.reshaped(&[a, b, k, k]).unwrap()),
                bias: Parameter::new("b", Tensor::zeros(&[a]).unwrap()),
                stride: s,
            };
            // conv maps [b, s*h, s*w] -> [a, h, w]; convT maps the other way.
            let u = rand_tensor(&mut rng, &[a, h, w]);
            let v = rand_tensor(&mut rng, &[b, s * h, s * w]);
            let up_u = up.forward(&u).unwrap();
            let conv_v = conv.forward(&v).unwrap();
            let lhs: f64 = up_u.data().iter().zip(v.data()).map(|(x, y)| x * y).sum();
            let rhs: f64 = u.data().iter().zip(conv_v.data()).map(|(x, y)| x * y).sum();
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(rel < 1e-10, "adjoint violated: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv3d_depth1_equals_conv2d() {
        let mut rng = Prng::new(5);
        let c3 = Conv3d::new(&mut rng, "t", 2, 3, 1, 3, 2);
        let c2 = Conv2d {
            weight: Parameter::new("w", c3.weight.value.reshaped(&[3, 2, 3, 3]).unwrap()),
            bias: Parameter::new("b", c3.bias.value.clone()),
            stride: 2,
        };
        let x2 = rand_tensor(&mut rng, &[2, 8, 8]);
        let x3 = x2.reshaped(&[2, 1, 8, 8]).unwrap();
        let y3 = c3.forward(&x3).unwrap();
        let y2 = c2.forward(&x2).unwrap();
        assert_eq!(y3.shape(), &[3, 1, 4, 4]);
        for (a, b) in y3.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_preserves_depth_and_strides_space() {
        let mut rng = Prng::new(6);
        let c3 = Conv3d::new(&mut rng, "t", 1, 4, 7, 7, 1);
        let x = rand_tensor(&mut rng, &[1, 8, 12, 12]);
        assert_eq!(c3.forward(&x).unwrap().shape(), &[4, 8, 12, 12]);
        let c3s = Conv3d::new(&mut rng, "t", 2, 3, 3, 3, 2);
        let xs = rand_tensor(&mut rng, &[2, 5, 8, 8]);
        assert_eq!(c3s.forward(&xs).unwrap().shape(), &[3, 5, 4, 4]);
    }

    #[test]
    fn convt3d_is_exact_adjoint_of_conv3d() {
        let mut rng = Prng::new(7);
        let (a, b, kd, k, s, d, h, w) = (2usize, 2usize, 3usize, 3usize, 2usize, 4usize, 3usize, 4usize);
        let up = ConvT3d::new(&mut rng, "t", a, b, kd, k, s);
        let conv = Conv3d {
            weight: Parameter::new("w", up.weight.value.reshaped(&[a, b, kd, k, k]).unwrap()),
            bias: Parameter::new("b", Tensor::zeros(&[a]).unwrap()),
            stride: s,
        };
        let u = rand_tensor(&mut rng, &[a, d, h, w]);
        let v = rand_tensor(&mut rng, &[b, d, s * h, s * w]);
        let lhs: f64 = up
            .forward(&u)
            .unwrap()
            .data()
            .iter()
            .zip(v.data())
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = u
            .data()
            .iter()
            .zip(conv.forward(&v).unwrap().data())
            .map(|(x, y)| x * y)
            .sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel < 1e-10, "adjoint violated: {lhs} vs {rhs}");
    }

    /// Harness: a layer plus its input treated as one parameter bag, with a
    /// fixed random projection turning the output into a scalar.
    struct ConvProbe {
        conv: Conv2d,
        x: Parameter,
        proj: Tensor,
    }

    impl Parameters for ConvProbe {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.conv.weight);
            f(&self.conv.bias);
            f(&self.x);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.conv.weight);
            f(&mut self.conv.bias);
            f(&mut self.x);
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        for seed in [1u64, 2, 3] {
            let mut rng = Prng::new(seed);
            let conv = Conv2d::new(&mut rng, "t", 2, 3, 3, 2);
            let x = Parameter::new("x", rand_tensor(&mut rng, &[2, 6, 6]));
            let proj = rand_tensor(&mut rng, &[3, 3, 3]);
            let mut probe = ConvProbe { conv, x, proj };
            let report = grad_check(
                &mut probe,
                |p| {
                    let y = p.conv.forward(&p.x.value)?;
                    Ok(y.data().iter().zip(p.proj.data()).map(|(a, b)| a * b).sum())
                },
                |p| {
                    p.zero_grads();
                    let _ = p.conv.forward(&p.x.value)?;
                    let dx = p.conv.backward(&p.x.value, &p.proj)?;
                    p.x.accumulate(&dx)?;
                    Ok(0.0)
                },
                &GradCheckOpts::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report}");
        }
    }

    struct ConvT3Probe {
        up: ConvT3d,
        x: Parameter,
        proj: Tensor,
    }

    impl Parameters for ConvT3Probe {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.up.weight);
            f(&self.up.bias);
            f(&self.x);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.up.weight);
            f(&mut self.up.bias);
            f(&mut self.x);
        }
    }

    #[test]
    fn convt3d_gradients_match_finite_differences() {
        for seed in [1u64, 2, 3] {
            let mut rng = Prng::new(seed);
            let up = ConvT3d::new(&mut rng, "t", 2, 2, 3, 3, 2);
            let x = Parameter::new("x", rand_tensor(&mut rng, &[2, 3, 3, 3]));
            let proj = rand_tensor(&mut rng, &[2, 3, 6, 6]);
            let mut probe = ConvT3Probe { up, x, proj };
            let report = grad_check(
                &mut probe,
                |p| {
                    let y = p.up.forward(&p.x.value)?;
                    Ok(y.data().iter().zip(p.proj.data()).map(|(a, b)| a * b).sum())
                },
                |p| {
                    p.zero_grads();
                    let _ = p.up.forward(&p.x.value)?;
                    let dx = p.up.backward(&p.x.value, &p.proj)?;
                    p.x.accumulate(&dx)?;
                    Ok(0.0)
                },
                &GradCheckOpts::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report}");
        }
    }
}
