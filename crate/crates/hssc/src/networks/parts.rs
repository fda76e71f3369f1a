//! Internal assembly pieces shared by the encoder, generator and
//! discriminator: dispatch over the four convolution types, the recurring
//! conv/norm/excitation/relu stage, and channel concatenation.

use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, ChannelNorm, ChannelNormCache, Conv2d, Conv3d, ConvT2d, ConvT3d,
    ResBlock3dCache, ResBlockCache, ResidualBlock, ResidualBlock3d, SeBlock, SeCache,
};
use crate::tensor::{Parameter, Tensor};

/// One convolution of any of the four kinds, behind a common interface.
#[derive(Debug, Clone)]
pub(crate) enum AnyConv {
    C2(Conv2d),
    T2(ConvT2d),
    C3(Conv3d),
    T3(ConvT3d),
}

impl AnyConv {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            AnyConv::C2(c) => c.forward(x),
            AnyConv::T2(c) => c.forward(x),
            AnyConv::C3(c) => c.forward(x),
            AnyConv::T3(c) => c.forward(x),
        }
    }

    /// `x` must be the exact forward input.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        match self {
            AnyConv::C2(c) => c.backward(x, dy),
            AnyConv::T2(c) => c.backward(x, dy),
            AnyConv::C3(c) => c.backward(x, dy),
            AnyConv::T3(c) => c.backward(x, dy),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        let (w, b) = self.params();
        f(w);
        f(b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        let (w, b) = match self {
            AnyConv::C2(c) => (&mut c.weight, &mut c.bias),
            AnyConv::T2(c) => (&mut c.weight, &mut c.bias),
            AnyConv::C3(c) => (&mut c.weight, &mut c.bias),
            AnyConv::T3(c) => (&mut c.weight, &mut c.bias),
        };
        f(w);
        f(b);
    }

    fn params(&self) -> (&Parameter, &Parameter) {
        match self {
            AnyConv::C2(c) => (&c.weight, &c.bias),
            AnyConv::T2(c) => (&c.weight, &c.bias),
            AnyConv::C3(c) => (&c.weight, &c.bias),
            AnyConv::T3(c) => (&c.weight, &c.bias),
        }
    }
}

pub(crate) fn visit_se(se: &SeBlock, f: &mut dyn FnMut(&Parameter)) {
    f(&se.fc1.weight);
    f(&se.fc1.bias);
    f(&se.fc2.weight);
    f(&se.fc2.bias);
}

pub(crate) fn visit_se_mut(se: &mut SeBlock, f: &mut dyn FnMut(&mut Parameter)) {
    f(&mut se.fc1.weight);
    f(&mut se.fc1.bias);
    f(&mut se.fc2.weight);
    f(&mut se.fc2.bias);
}

/// The recurring backbone unit: convolution, channel norm, optional
/// squeeze-excitation, rectifier.
#[derive(Debug, Clone)]
pub(crate) struct Stage {
    pub conv: AnyConv,
    pub norm: ChannelNorm,
    pub se: Option<SeBlock>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    /// Convolution input, needed for the weight gradient.
    x: Tensor,
    norm: ChannelNormCache,
    /// Norm output when an excitation block consumed it.
    se_in: Option<Tensor>,
    se: Option<SeCache>,
    /// Rectifier input.
    pre: Tensor,
}

impl Stage {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, StageCache)> {
        let c = self.conv.forward(x)?;
        let (n, norm) = self.norm.forward(&c)?;
        let (pre, se_in, se) = match &self.se {
            Some(block) => {
                let (s, cache) = block.forward(&n)?;
                (s, Some(n), Some(cache))
            }
            None => (n, None, None),
        };
        let y = relu(&pre);
        Ok((
            y,
            StageCache {
                x: x.clone(),
                norm,
                se_in,
                se,
                pre,
            },
        ))
    }

    pub fn backward(&mut self, cache: &StageCache, dy: &Tensor) -> Result<Tensor> {
        let dpre = relu_backward(&cache.pre, dy);
        let dn = match (&mut self.se, &cache.se_in, &cache.se) {
            (Some(block), Some(se_in), Some(se_cache)) => {
                block.backward(se_in, se_cache, &dpre)?
            }
            _ => dpre,
        };
        let dc = self.norm.backward(&cache.norm, &dn)?;
        self.conv.backward(&cache.x, &dc)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conv.visit(f);
        f(&self.norm.gain);
        f(&self.norm.offset);
        if let Some(se) = &self.se {
            visit_se(se, f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conv.visit_mut(f);
        f(&mut self.norm.gain);
        f(&mut self.norm.offset);
        if let Some(se) = &mut self.se {
            visit_se_mut(se, f);
        }
    }
}

/// Residual block on planes or volumes, behind one interface.
#[derive(Debug, Clone)]
pub(crate) enum AnyBlock {
    Flat(ResidualBlock),
    Vol(ResidualBlock3d),
}

#[derive(Debug, Clone)]
pub(crate) enum AnyBlockCache {
    Flat(ResBlockCache),
    Vol(ResBlock3dCache),
}

impl AnyBlock {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AnyBlockCache)> {
        match self {
            AnyBlock::Flat(b) => {
                let (y, c) = b.forward(x)?;
                Ok((y, AnyBlockCache::Flat(c)))
            }
            AnyBlock::Vol(b) => {
                let (y, c) = b.forward(x)?;
                Ok((y, AnyBlockCache::Vol(c)))
            }
        }
    }

    pub fn backward(&mut self, cache: &AnyBlockCache, dy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (AnyBlock::Flat(b), AnyBlockCache::Flat(c)) => b.backward(c, dy),
            (AnyBlock::Vol(b), AnyBlockCache::Vol(c)) => b.backward(c, dy),
            _ => Err(Error::config("residual block cache kind mismatch")),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        match self {
            AnyBlock::Flat(b) => b.visit(f),
            AnyBlock::Vol(b) => b.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            AnyBlock::Flat(b) => b.visit_mut(f),
            AnyBlock::Vol(b) => b.visit_mut(f),
        }
    }
}

/// Stacks `a` over `b` along the channel axis; trailing axes must agree.
pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != b.ndim() || a.ndim() < 2 || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&shape, data)
}

/// Splits a concatenated tensor back into its first `c_first` channels and
/// the rest. Inverse of [`concat_channels`].
pub(crate) fn split_channels(x: &Tensor, c_first: usize) -> Result<(Tensor, Tensor)> {
    if x.ndim() < 2 || c_first == 0 || c_first >= x.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "split_channels",
            left: vec![c_first],
            right: x.shape().to_vec(),
        });
    }
    let per_channel: usize = x.shape()[1..].iter().product();
    let cut = c_first * per_channel;
    let mut first_shape = x.shape().to_vec();
    first_shape[0] = c_first;
    let mut rest_shape = x.shape().to_vec();
    rest_shape[0] = x.shape()[0] - c_first;
    let first = Tensor::new(&first_shape, x.data()[..cut].to_vec())?;
    let rest = Tensor::new(&rest_shape, x.data()[cut..].to_vec())?;
    Ok((first, rest))
}
