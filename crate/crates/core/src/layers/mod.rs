//! Parameterised building blocks: convolution blocks, a convolutional GRU,
//! ASPP blocks and small regression heads. All of them preserve the spatial
//! extent `(X, Y)` of their input.

mod aspp;
mod conv;
mod gru;
mod head;
mod params;

pub use aspp::Aspp;
pub use conv::ConvBlock;
pub use gru::ConvGru;
pub use head::RegressionHead;
pub use params::{Bound, ParameterStore};

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Slope of the leaky ReLU used after every hidden convolution.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvGru,
    Aspp,
    Head,
}

/// Static description of a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            dilations: alloc::vec![1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("layer channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("layer kernel must be odd".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("dilation rates must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform fan-in bound: variance `gain^2 / fan_in`.
pub(crate) fn fan_in_bound(fan_in: usize, activation: Activation) -> f64 {
    let gain2 = match activation {
        Activation::LeakyRelu => 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE),
        Activation::Linear => 1.0,
    };
    num_traits::Float::sqrt(3.0 * gain2 / fan_in as f64)
}
