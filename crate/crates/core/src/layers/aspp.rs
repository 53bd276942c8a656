use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{Activation, Bound, ConvBlock, LayerKind, LayerSpec, ParameterStore};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Atrous spatial pyramid pooling block: parallel 3x3 convolutions with
/// different dilation rates, concatenated along channels and fused by a
/// 1x1 convolution.
#[derive(Debug, Clone)]
pub struct Aspp {
    pub spec: LayerSpec,
    branches: Vec<ConvBlock>,
    fuse: ConvBlock,
}

impl Aspp {
    pub fn new(name: &str, in_channels: usize, branch_channels: usize, out_channels: usize, rates: &[usize]) -> Self {
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ConvBlock::dilated(
                    &format!("{name}.rate{i}"),
                    in_channels,
                    branch_channels,
                    3,
                    r,
                    Activation::LeakyRelu,
                )
            })
            .collect();
        let fuse = ConvBlock::new(
            &format!("{name}.fuse"),
            branch_channels * rates.len(),
            out_channels,
            1,
            Activation::LeakyRelu,
        );
        Self {
            spec: LayerSpec {
                kind: LayerKind::Aspp,
                in_channels,
                out_channels,
                kernel: 3,
                dilations: rates.to_vec(),
            },
            branches,
            fuse,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.spec.validate()?;
        for b in &self.branches {
            b.init(store, rng)?;
        }
        self.fuse.init(store, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            outs.push(b.forward(g, p, x)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        self.fuse.forward(g, p, cat)
    }
}
