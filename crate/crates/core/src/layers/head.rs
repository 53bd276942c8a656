use alloc::format;

use rand::Rng;

use super::{Activation, Bound, ConvBlock, ParameterStore};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Two 3x3 conv blocks followed by a linear 1x1 projection. Used for the
/// velocity head and the query/key embeddings.
#[derive(Debug, Clone)]
pub struct RegressionHead {
    first: ConvBlock,
    second: ConvBlock,
    out: ConvBlock,
}

impl RegressionHead {
    pub fn new(name: &str, in_channels: usize, hidden: usize, out_channels: usize) -> Self {
        Self {
            first: ConvBlock::new(&format!("{name}.conv0"), in_channels, hidden, 3, Activation::LeakyRelu),
            second: ConvBlock::new(&format!("{name}.conv1"), hidden, hidden, 3, Activation::LeakyRelu),
            out: ConvBlock::new(&format!("{name}.out"), hidden, out_channels, 1, Activation::Linear),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out.spec.out_channels
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.first.init(store, rng)?;
        self.second.init(store, rng)?;
        self.out.init(store, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.first.forward(g, p, x)?;
        let y = self.second.forward(g, p, y)?;
        self.out.forward(g, p, y)
    }
}
