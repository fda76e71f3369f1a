//! Residual refinement blocks.
//!
//! `y = x + norm2(conv2(relu(norm1(conv1(x)))))`: two 3x3 convolutions at
//! constant width with channel norms, rectified between them, and an
//! additive skip around the pair. [`ResidualBlock`] works on `[C, H, W]`
//! planes; [`ResidualBlock3d`] is the same wiring with 3D convolutions on
//! `[C, D, H, W]` volumes.

use crate::error::Result;
use crate::layers::activ::{relu, relu_backward};
use crate::layers::conv::{Conv2d, Conv3d};
use crate::layers::norm::{ChannelNorm, ChannelNormCache};
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub norm1: ChannelNorm,
    pub conv2: Conv2d,
    pub norm2: ChannelNorm,
}

#[derive(Debug, Clone)]
pub struct ResBlockCache {
    x: Tensor,
    n1: ChannelNormCache,
    pre_act: Tensor,
    act: Tensor,
    n2: ChannelNormCache,
}

impl ResidualBlock {
    pub fn new(rng: &mut Prng, id: &str, channels: usize) -> ResidualBlock {
        ResidualBlock {
            conv1: Conv2d::new(rng, &format!("{id}.conv1"), channels, channels, 3, 1),
            norm1: ChannelNorm::new(&format!("{id}.norm1"), channels),
            conv2: Conv2d::new(rng, &format!("{id}.conv2"), channels, channels, 3, 1),
            norm2: ChannelNorm::new(&format!("{id}.norm2"), channels),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ResBlockCache)> {
        let c1 = self.conv1.forward(x)?;
        let (pre_act, n1) = self.norm1.forward(&c1)?;
        let act = relu(&pre_act);
        let c2 = self.conv2.forward(&act)?;
        let (branch, n2) = self.norm2.forward(&c2)?;
        let y = x.add(&branch)?;
        Ok((
            y,
            ResBlockCache {
                x: x.clone(),
                n1,
                pre_act,
                act,
                n2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResBlockCache, dy: &Tensor) -> Result<Tensor> {
        let dbranch = self.norm2.backward(&cache.n2, dy)?;
        let dact = self.conv2.backward(&cache.act, &dbranch)?;
        let dpre = relu_backward(&cache.pre_act, &dact);
        let dc1 = self.norm1.backward(&cache.n1, &dpre)?;
        let mut dx = self.conv1.backward(&cache.x, &dc1)?;
        // Skip path.
        dx.add_assign(dy)?;
        Ok(dx)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.conv1.weight);
        f(&self.conv1.bias);
        f(&self.norm1.gain);
        f(&self.norm1.offset);
        f(&self.conv2.weight);
        f(&self.conv2.bias);
        f(&self.norm2.gain);
        f(&self.norm2.offset);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.conv1.weight);
        f(&mut self.conv1.bias);
        f(&mut self.norm1.gain);
        f(&mut self.norm1.offset);
        f(&mut self.conv2.weight);
        f(&mut self.conv2.bias);
        f(&mut self.norm2.gain);
        f(&mut self.norm2.offset);
    }
}

#[derive(Debug, Clone)]
pub struct ResidualBlock3d {
    pub conv1: Conv3d,
    pub norm1: ChannelNorm,
    pub conv2: Conv3d,
    pub norm2: ChannelNorm,
}

#[derive(Debug, Clone)]
pub struct ResBlock3dCache {
    x: Tensor,
    n1: ChannelNormCache,
    pre_act: Tensor,
    act: Tensor,
    n2: ChannelNormCache,
}

impl ResidualBlock3d {
    pub fn new(rng: &mut Prng, id: &str, channels: usize) -> ResidualBlock3d {
        ResidualBlock3d {
            conv1: Conv3d::new(rng, &format!("{id}.conv1"), channels, channels, 3, 3, 1),
            norm1: ChannelNorm::new(&format!("{id}.norm1"), channels),
            conv2: Conv3d::new(rng, &format!("{id}.conv2"), channels, channels, 3, 3, 1),
            norm2: ChannelNorm::new(&format!("{id}.norm2"), channels),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ResBlock3dCache)> {
        let c1 = self.conv1.forward(x)?;
        let (pre_act, n1) = self.norm1.forward(&c1)?;
        let act = relu(&pre_act);
        let c2 = self.conv2.forward(&act)?;
        let (branch, n2) = self.norm2.forward(&c2)?;
        let y = x.add(&branch)?;
        Ok((
            y,
            ResBlock3dCache {
                x: x.clone(),
                n1,
                pre_act,
                act,
                n2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResBlock3dCache, dy: &Tensor) -> Result<Tensor> {
        let dbranch = self.norm2.backward(&cache.n2, dy)?;
        let dact = self.conv2.backward(&cache.act, &dbranch)?;
        let dpre = relu_backward(&cache.pre_act, &dact);
        let dc1 = self.norm1.backward(&cache.n1, &dpre)?;
        let mut dx = self.conv1.backward(&cache.x, &dc1)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.conv1.weight);
        f(&self.conv1.bias);
        f(&self.norm1.gain);
        f(&self.norm1.offset);
        f(&self.conv2.weight);
        f(&self.conv2.bias);
        f(&self.norm2.gain);
        f(&self.norm2.offset);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.conv1.weight);
        f(&mut self.conv1.bias);
        f(&mut self.norm1.gain);
        f(&mut self.norm1.offset);
        f(&mut self.conv2.weight);
        f(&mut self.conv2.bias);
        f(&mut self.norm2.gain);
        f(&mut self.norm2.offset);
    }
}
