//! Network building blocks with explicit forward and backward passes.
//!
//! Every layer follows the same contract. `forward` borrows the layer
//! immutably and returns the output (plus a cache when intermediates are
//! needed later); `backward` consumes that cache together with the upstream
//! gradient, accumulates parameter gradients into the layer's own
//! [`Parameter`](crate::tensor::Parameter) accumulators, and returns the
//! gradient with respect to the layer input. Nothing here owns hidden
//! mutable state, so forwards of the same layer can run concurrently.
//!
//! Convolutions use the cross-correlation convention (no kernel flip) with
//! zero padding. "Same" padding follows the ceil-mode rule: the output
//! spatial extent is `ceil(n / stride)`, and when the total padding is odd
//! the extra zero goes after (bottom/right). Transposed convolutions are
//! exact adjoints of the matching strided convolution, sharing the same
//! low-level kernels, so `<convT(W, u), v> == <u, conv(W, v)>` holds to
//! rounding.

mod activ;
mod block;
mod conv;
mod norm;
mod resample;
mod se;

pub use activ::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    sigmoid_scalar,
};
pub use block::{ResBlock3dCache, ResBlockCache, ResidualBlock, ResidualBlock3d};
pub use conv::{Conv2d, Conv3d, ConvT2d, ConvT3d};
pub use norm::{ChannelNorm, ChannelNormCache};
pub use resample::{nn_upsample, nn_upsample_backward};
pub use se::{Linear, SeBlock, SeCache};

/// Leak slope shared by every leaky rectifier in the models.
pub const LEAKY_SLOPE: f64 = 0.2;
