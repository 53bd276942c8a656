//! The experiment architectures: a shared preprocessing stage, an
//! exchangeable recurrent unit and an ASPP segmentation head.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell::{CellState, GruCell, RecurrentState, RspCell, StepOutput, VelocityHead};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Activation, Aspp, Bound, ConvBlock, ConvGru, ParameterStore};
use crate::projection::{offset_to_velocity, velocity_to_offset, GridGeometry};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of segmentation classes: free, unknown, occupied, moving.
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Architecture {
    SingleFrame,
    SingleFrameLarge,
    Gru,
    Pyramid,
    Rsp,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::SingleFrame,
        Architecture::SingleFrameLarge,
        Architecture::Gru,
        Architecture::Pyramid,
        Architecture::Rsp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SingleFrame => "single_frame",
            Architecture::SingleFrameLarge => "single_frame_large",
            Architecture::Gru => "gru",
            Architecture::Pyramid => "pyramid",
            Architecture::Rsp => "rsp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, Architecture::SingleFrame | Architecture::SingleFrameLarge)
    }
}

impl core::fmt::Display for Architecture {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub geom: GridGeometry,
    /// Sensor input channels.
    pub s: usize,
    /// Encoded input channels.
    pub f: usize,
    /// Memory channels.
    pub m: usize,
    /// Query/key depth.
    pub d_h: usize,
    /// Hidden width of the regression heads.
    pub head_width: usize,
    /// Channels per dilation branch of an ASPP block.
    pub aspp_branch: usize,
    /// Output channels of each ASPP block.
    pub aspp_width: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_blocks: usize,
    /// Memory channels per pyramid level.
    pub pyramid_m: usize,
    pub classes: usize,
    /// Adds a `log sigma^2` channel to the velocity head.
    pub heteroscedastic: bool,
}

impl ModelConfig {
    pub fn new(arch: Architecture, geom: GridGeometry) -> Self {
        Self {
            arch,
            geom,
            s: 1,
            f: 8,
            m: 16,
            d_h: 8,
            head_width: 8,
            aspp_branch: 4,
            aspp_width: 8,
            aspp_rates: alloc::vec![1, 2, 4, 8],
            aspp_blocks: 4,
            pyramid_m: 8,
            classes: NUM_CLASSES,
            heteroscedastic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        if self.classes != NUM_CLASSES {
            return Err(Error::Config(format!("class count must be {NUM_CLASSES}")));
        }
        let widths = [
            self.s,
            self.f,
            self.m,
            self.d_h,
            self.head_width,
            self.aspp_branch,
            self.aspp_width,
            self.aspp_blocks,
            self.pyramid_m,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return Err(Error::Config("ASPP rates must be positive".into()));
        }
        if self.arch == Architecture::Pyramid && (self.geom.x % 4 != 0 || self.geom.y % 4 != 0) {
            return Err(Error::Config("pyramid RNN needs a grid divisible by 4".into()));
        }
        Ok(())
    }
}

/// Per-frame outputs. `V` is [`Var`] inside a graph or [`Tensor`] once
/// detached.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput<V> {
    pub class_logits: V,
    pub v_initial: V,
    pub v_refined: V,
    pub attention: Option<V>,
    /// Predicted `log sigma^2` of `v_initial`, when enabled.
    pub log_var: Option<V>,
    /// Features handed to the segmentation head (the new hidden state for
    /// recurrent models).
    pub hidden: V,
}

impl NetworkOutput<Var> {
    pub fn detach<T: Real>(&self, g: &Graph<T>) -> NetworkOutput<Tensor<T>> {
        NetworkOutput {
            class_logits: g.value(self.class_logits).clone(),
            v_initial: g.value(self.v_initial).clone(),
            v_refined: g.value(self.v_refined).clone(),
            attention: self.attention.map(|a| g.value(a).clone()),
            log_var: self.log_var.map(|a| g.value(a).clone()),
            hidden: g.value(self.hidden).clone(),
        }
    }
}

/// Three-level convolutional GRU pyramid: the input is mean-pooled twice,
/// each scale runs its own GRU, and the upsampled states are fused by a 1x1
/// convolution.
#[derive(Debug, Clone)]
pub struct PyramidRnn {
    pub geom: GridGeometry,
    levels: Vec<ConvGru>,
    fuse: ConvBlock,
    velocity: VelocityHead,
}

pub const PYRAMID_LEVELS: usize = 3;

impl PyramidRnn {
    pub fn new(name: &str, geom: GridGeometry, f: usize, level_m: usize, out_m: usize, head_width: usize) -> Self {
        Self {
            geom,
            levels: (0..PYRAMID_LEVELS)
                .map(|l| ConvGru::new(&format!("{name}.level{l}"), f, level_m))
                .collect(),
            fuse: ConvBlock::new(
                &format!("{name}.fuse"),
                level_m * PYRAMID_LEVELS,
                out_m,
                1,
                Activation::LeakyRelu,
            ),
            velocity: VelocityHead::new(&format!("{name}.vel"), out_m, head_width),
        }
    }

    pub fn with_variance(mut self) -> Self {
        self.velocity = self.velocity.with_variance();
        self
    }

    pub fn level_geometry(&self, level: usize) -> GridGeometry {
        self.geom.coarsened(1 << level)
    }

    pub fn init<T: Real, R: rand::Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        for l in &self.levels {
            l.init(store, rng)?;
        }
        self.fuse.init(store, rng)?;
        self.velocity.init(store, rng)
    }

    pub fn zero_state<T: Real>(&self) -> Vec<RecurrentState<T>> {
        (0..PYRAMID_LEVELS)
            .map(|l| {
                let g = self.level_geometry(l);
                RecurrentState::zeros(g.x, g.y, self.levels[l].hidden_channels)
            })
            .collect()
    }

    /// One pyramid step. Returns the fused features and the new per-level
    /// hidden states.
    pub fn features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, states: &[CellState], input: Var) -> Result<(Var, Vec<Var>)> {
        if states.len() != PYRAMID_LEVELS {
            return Err(shape_err("pyramid_rnn_step", &[states.len()], &[PYRAMID_LEVELS]));
        }
        let mut x = input;
        let mut hs = Vec::with_capacity(PYRAMID_LEVELS);
        for (l, gru) in self.levels.iter().enumerate() {
            if l > 0 {
                x = g.avg_pool2(x)?;
            }
            hs.push(gru.step(g, p, states[l].h, x)?);
        }
        let mut ups = Vec::with_capacity(PYRAMID_LEVELS);
        for (l, &h) in hs.iter().enumerate() {
            let mut u = h;
            for _ in 0..l {
                u = g.upsample2(u)?;
            }
            ups.push(u);
        }
        let cat = g.concat(&ups)?;
        Ok((self.fuse.forward(g, p, cat)?, hs))
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, p: &Bound, states: &[CellState], input: Var) -> Result<(StepOutput, Vec<CellState>)> {
        let (features, hs) = self.features(g, p, states, input)?;
        let (v_initial, log_var) = self.velocity.forward(g, p, features)?;
        let off = velocity_to_offset(g, v_initial, &self.geom)?;
        let v_refined = offset_to_velocity(g, off, &self.geom);
        let next = hs
            .into_iter()
            .zip(states)
            .map(|(h, s)| CellState { h, off: s.off })
            .collect();
        Ok((
            StepOutput {
                state: CellState { h: features, off },
                features,
                v_initial,
                v_refined,
                attention: None,
                log_var,
            },
            next,
        ))
    }
}

#[derive(Debug, Clone)]
enum Recurrent {
    None { velocity: VelocityHead },
    Gru(GruCell),
    Rsp(RspCell),
    Pyramid(PyramidRnn),
}

/// A fully specified network: layer structure plus naming. Parameters live
/// in a separate [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// Encoded input channels actually used (inflated for
    /// `single_frame_large`).
    pub f_effective: usize,
    prep: [ConvBlock; 2],
    rnn: Recurrent,
    seg: Vec<Aspp>,
    logits: ConvBlock,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let f = if config.arch == Architecture::SingleFrameLarge {
            aligned_width(config)?
        } else {
            config.f
        };
        Ok(Self::with_width(config, f))
    }

    fn with_width(config: &ModelConfig, f: usize) -> Self {
        let geom = config.geom;
        let prep = [
            ConvBlock::new("prep.conv0", config.s, f, 3, Activation::LeakyRelu),
            ConvBlock::new("prep.conv1", f, f, 3, Activation::LeakyRelu),
        ];
        let het = config.heteroscedastic;
        let (rnn, feat) = match config.arch {
            Architecture::SingleFrame | Architecture::SingleFrameLarge => (
                Recurrent::None {
                    velocity: {
                        let v = VelocityHead::new("frame.vel", f, config.head_width);
                        if het {
                            v.with_variance()
                        } else {
                            v
                        }
                    },
                },
                f,
            ),
            Architecture::Gru => (
                Recurrent::Gru({
                    let c = GruCell::new("rnn", geom, f, config.m, config.head_width);
                    if het {
                        c.with_variance()
                    } else {
                        c
                    }
                }),
                config.m,
            ),
            Architecture::Rsp => (
                Recurrent::Rsp({
                    let c = RspCell::new("rnn", geom, f, config.m, config.d_h, config.head_width);
                    if het {
                        c.with_variance()
                    } else {
                        c
                    }
                }),
                config.m,
            ),
            Architecture::Pyramid => (
                Recurrent::Pyramid({
                    let c = PyramidRnn::new("rnn", geom, f, config.pyramid_m, config.m, config.head_width);
                    if het {
                        c.with_variance()
                    } else {
                        c
                    }
                }),
                config.m,
            ),
        };
        let seg = (0..config.aspp_blocks)
            .map(|b| {
                let cin = if b == 0 { feat } else { config.aspp_width };
                Aspp::new(
                    &format!("seg.aspp{b}"),
                    cin,
                    config.aspp_branch,
                    config.aspp_width,
                    &config.aspp_rates,
                )
            })
            .collect();
        let logits = ConvBlock::new("seg.logits", config.aspp_width, config.classes, 1, Activation::Linear);
        Self {
            config: config.clone(),
            f_effective: f,
            prep,
            rnn,
            seg,
            logits,
        }
    }

    pub fn arch(&self) -> Architecture {
        self.config.arch
    }

    pub fn geom(&self) -> &GridGeometry {
        &self.config.geom
    }

    /// Deterministic initialisation from `seed`.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParameterStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for c in &self.prep {
            c.init(&mut store, &mut rng)?;
        }
        match &self.rnn {
            Recurrent::None { velocity } => velocity.init(&mut store, &mut rng)?,
            Recurrent::Gru(c) => c.init(&mut store, &mut rng)?,
            Recurrent::Rsp(c) => c.init(&mut store, &mut rng)?,
            Recurrent::Pyramid(c) => c.init(&mut store, &mut rng)?,
        }
        for a in &self.seg {
            a.init(&mut store, &mut rng)?;
        }
        self.logits.init(&mut store, &mut rng)?;
        Ok(store)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.init_params::<f32>(0)?.count())
    }

    pub fn rsp_cell(&self) -> Option<&RspCell> {
        match &self.rnn {
            Recurrent::Rsp(c) => Some(c),
            _ => None,
        }
    }

    pub fn pyramid(&self) -> Option<&PyramidRnn> {
        match &self.rnn {
            Recurrent::Pyramid(c) => Some(c),
            _ => None,
        }
    }

    /// Cold-start memory for one sequence.
    pub fn zero_state<T: Real>(&self) -> Vec<RecurrentState<T>> {
        let g = &self.config.geom;
        match &self.rnn {
            Recurrent::None { .. } => Vec::new(),
            Recurrent::Gru(_) | Recurrent::Rsp(_) => alloc::vec![RecurrentState::zeros(g.x, g.y, self.config.m)],
            Recurrent::Pyramid(p) => p.zero_state(),
        }
    }

    pub fn check_input<T: Real>(&self, g: &Graph<T>, input: Var) -> Result<()> {
        let want = [self.config.geom.x, self.config.geom.y, self.config.s];
        if g.shape(input) != want {
            return Err(shape_err("forward", g.shape(input), &want));
        }
        Ok(())
    }

    /// One frame through the whole network.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        state: &[CellState],
        input: Var,
    ) -> Result<(NetworkOutput<Var>, Vec<CellState>)> {
        self.check_input(g, input)?;
        let mut x = input;
        for c in &self.prep {
            x = c.forward(g, p, x)?;
        }
        let one = |state: &[CellState]| -> Result<CellState> {
            state.first().copied().ok_or_else(|| shape_err("forward", &[0], &[1]))
        };
        let (out, next) = match &self.rnn {
            Recurrent::None { velocity } => {
                let (v, log_var) = velocity.forward(g, p, x)?;
                let off = velocity_to_offset(g, v, &self.config.geom)?;
                let vr = offset_to_velocity(g, off, &self.config.geom);
                (
                    StepOutput {
                        state: CellState { h: x, off },
                        features: x,
                        v_initial: v,
                        v_refined: vr,
                        attention: None,
                        log_var,
                    },
                    Vec::new(),
                )
            }
            Recurrent::Gru(c) => {
                let o = c.step(g, p, one(state)?, x)?;
                (o, alloc::vec![o.state])
            }
            Recurrent::Rsp(c) => {
                let o = c.step(g, p, one(state)?, x)?;
                (o, alloc::vec![o.state])
            }
            Recurrent::Pyramid(c) => c.step(g, p, state, x)?,
        };
        let mut y = out.features;
        for a in &self.seg {
            y = a.forward(g, p, y)?;
        }
        let class_logits = self.logits.forward(g, p, y)?;
        Ok((
            NetworkOutput {
                class_logits,
                v_initial: out.v_initial,
                v_refined: out.v_refined,
                attention: out.attention,
                log_var: out.log_var,
                hidden: out.features,
            },
            next,
        ))
    }

    /// Unrolls the network over `inputs` inside one graph.
    pub fn unroll<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        state: Vec<CellState>,
        inputs: &[Var],
    ) -> Result<(Vec<NetworkOutput<Var>>, Vec<CellState>)> {
        let mut state = state;
        let mut outs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (o, next) = self.step(g, p, &state, x)?;
            outs.push(o);
            state = next;
        }
        Ok((outs, state))
    }
}

/// Smallest encoder width whose single-frame model has at least as many
/// parameters as the recurrent (GRU) model of the same configuration.
fn aligned_width(config: &ModelConfig) -> Result<usize> {
    let mut gru = config.clone();
    gru.arch = Architecture::Gru;
    let target = Model::with_width(&gru, gru.f).param_count()?;
    let mut single = config.clone();
    single.arch = Architecture::SingleFrame;
    let mut f = config.f;
    while Model::with_width(&single, f).param_count()? < target {
        f += 1;
    }
    Ok(f)
}

/// Stateful forward-only rollout. `state` carries memory between calls;
/// pass a fresh [`Model::zero_state`] to start a new sequence.
pub fn forward_sequence<T: Real>(
    model: &Model,
    params: &ParameterStore<T>,
    frames: &[Tensor<T>],
    state: &mut Vec<RecurrentState<T>>,
) -> Result<Vec<NetworkOutput<Tensor<T>>>> {
    if frames.is_empty() {
        return Err(crate::error::invalid("forward_sequence", "empty frame list"));
    }
    let mut outs = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut g = Graph::new();
        let p = bind_constants(params, &mut g);
        let cs: Vec<CellState> = state.iter().map(|s| s.bind(&mut g)).collect();
        let x = g.constant(frame.clone());
        let (o, next) = model.step(&mut g, &p, &cs, x)?;
        outs.push(o.detach(&g));
        *state = next.into_iter().map(|s| RecurrentState::detach(&g, s)).collect();
    }
    Ok(outs)
}

/// Binds parameters as constants (no gradient bookkeeping).
pub fn bind_constants<T: Real>(params: &ParameterStore<T>, g: &mut Graph<T>) -> Bound {
    let names: Vec<(String, Var)> = params.iter().map(|(k, v)| (k.clone(), g.constant(v.clone()))).collect();
    Bound::from_pairs(names)
}
