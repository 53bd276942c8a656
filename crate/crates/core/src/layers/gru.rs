use alloc::format;

use rand::Rng;

use super::{Activation, Bound, ConvBlock, ParameterStore};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Convolutional GRU with 3x3 gate convolutions over `[x, h]`:
///
/// ```text
/// z  = sigmoid(conv_z([x, h]))
/// r  = sigmoid(conv_r([x, h]))
/// h~ = tanh(conv_h([x, r * h]))
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone)]
pub struct ConvGru {
    pub input_channels: usize,
    pub hidden_channels: usize,
    update: ConvBlock,
    reset: ConvBlock,
    candidate: ConvBlock,
}

impl ConvGru {
    pub fn new(name: &str, input_channels: usize, hidden_channels: usize) -> Self {
        let cin = input_channels + hidden_channels;
        let gate = |g: &str| ConvBlock::new(&format!("{name}.{g}"), cin, hidden_channels, 3, Activation::Linear);
        Self {
            input_channels,
            hidden_channels,
            update: gate("z"),
            reset: gate("r"),
            candidate: gate("h"),
        }
    }

    /// Parameter name of the update-gate bias.
    pub fn update_bias_name(&self) -> &str {
        self.update.bias_name()
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.update.init(store, rng)?;
        self.reset.init(store, rng)?;
        self.candidate.init(store, rng)
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, p: &Bound, h_prev: Var, x: Var) -> Result<Var> {
        let (sh, sx) = (g.shape(h_prev), g.shape(x));
        if sh.len() != 3
            || sx.len() != 3
            || sh[..2] != sx[..2]
            || sh[2] != self.hidden_channels
            || sx[2] != self.input_channels
        {
            return Err(shape_err("conv_gru_step", sh, sx));
        }
        let xh = g.concat(&[x, h_prev])?;
        let z = self.update.forward(g, p, xh)?;
        let z = g.sigmoid(z);
        let r = self.reset.forward(g, p, xh)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h_prev)?;
        let xrh = g.concat(&[x, rh])?;
        let cand = self.candidate.forward(g, p, xrh)?;
        let cand = g.tanh(cand);
        let keep = g.one_minus(z);
        let kept = g.mul(keep, h_prev)?;
        let fresh = g.mul(z, cand)?;
        g.add(kept, fresh)
    }
}
