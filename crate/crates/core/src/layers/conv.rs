use alloc::format;
use alloc::string::String;

use rand::Rng;

use super::{fan_in_bound, Activation, Bound, LayerKind, LayerSpec, ParameterStore, LEAKY_SLOPE};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

/// `k x k` convolution (stride 1, zero "same" padding) + bias + activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub spec: LayerSpec,
    pub activation: Activation,
    weight: String,
    bias: String,
}

impl ConvBlock {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, activation: Activation) -> Self {
        Self::dilated(name, in_channels, out_channels, kernel, 1, activation)
    }

    pub fn dilated(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        activation: Activation,
    ) -> Self {
        Self {
            spec: LayerSpec {
                kind: LayerKind::Conv,
                in_channels,
                out_channels,
                kernel,
                dilations: alloc::vec![dilation],
            },
            activation,
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.spec.validate()?;
        let s = &self.spec;
        let fan_in = s.kernel * s.kernel * s.in_channels;
        store.init_uniform(
            &self.weight,
            &[s.kernel, s.kernel, s.in_channels, s.out_channels],
            fan_in_bound(fan_in, self.activation),
            rng,
        )?;
        store.init_uniform(&self.bias, &[s.out_channels], 0.0, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = *g.shape(x).last().unwrap_or(&0);
        if g.shape(x).len() != 3 || c != self.spec.in_channels {
            return Err(shape_err("conv_block", g.shape(x), &[self.spec.in_channels]));
        }
        let y = g.conv2d(x, p.get(&self.weight)?, self.spec.dilations[0])?;
        let y = g.add_bias(y, p.get(&self.bias)?)?;
        Ok(match self.activation {
            Activation::LeakyRelu => g.leaky_relu(y, T::of(LEAKY_SLOPE)),
            Activation::Linear => y,
        })
    }
}
