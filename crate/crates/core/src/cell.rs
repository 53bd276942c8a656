//! Recurrent state projection cell.
//!
//! One step, given memory `(h, off)` from the previous frame and the
//! encoded input `I`:
//!
//! 1. queries `q = f_q(h)` are computed from memory;
//! 2. `[h, off, q]` is splatted along `off`, giving `h'`, `off'`, `q'`;
//! 3. keys `k = f_k(I)` and the gate `att = sigmoid(<q', k> / sqrt(d))`;
//! 4. the projected memory is gated, `att * h'`;
//! 5. a convolutional GRU consumes the gated memory and `I`;
//! 6. the velocity head reads the new hidden state, `off = v / FR`;
//! 7. `off+ = att * off' + (1 - att) * off`;
//! 8. the new memory is `(h_new, off+)` and the reported velocity `off+ * FR`.
//!
//! Hidden features are summed where projections collide; offsets and
//! queries are mass-averaged.

use alloc::string::String;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Bound, ConvGru, ParameterStore, RegressionHead};
use crate::projection::{
    clamp_offsets, normalize_projection, offset_to_velocity, project_state, velocity_to_offset, GridGeometry, Merge,
};
use crate::real::Real;
use crate::tensor::Tensor;

/// Memory of a recurrent unit inside one graph: hidden features `[X, Y, M]`
/// and offsets `[X, Y, 2]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellState {
    pub h: Var,
    pub off: Var,
}

/// Detached memory carried between graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub h: Tensor<T>,
    pub off: Tensor<T>,
}

impl<T: Real> RecurrentState<T> {
    /// The cold-start state `h = 0, off = 0`.
    pub fn zeros(x: usize, y: usize, hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[x, y, hidden]),
            off: Tensor::zeros(&[x, y, 2]),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>) -> CellState {
        CellState {
            h: g.constant(self.h.clone()),
            off: g.constant(self.off.clone()),
        }
    }

    pub fn detach(g: &Graph<T>, s: CellState) -> Self {
        Self {
            h: g.value(s.h).clone(),
            off: g.value(s.off).clone(),
        }
    }
}

/// Query/key fields of depth `d_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingPair {
    pub q: Var,
    pub k: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutput {
    pub state: CellState,
    /// GRU output; also the new hidden state.
    pub features: Var,
    pub v_initial: Var,
    pub v_refined: Var,
    pub attention: Option<Var>,
    /// Predicted `log sigma^2` of the initial velocity, when enabled.
    pub log_var: Option<Var>,
}

/// Velocity regression head, optionally with a third channel carrying a
/// predicted `log sigma^2`.
#[derive(Debug, Clone)]
pub struct VelocityHead {
    name: String,
    in_channels: usize,
    hidden: usize,
    head: RegressionHead,
}

impl VelocityHead {
    pub fn new(name: &str, in_channels: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            hidden,
            head: RegressionHead::new(name, in_channels, hidden, 2),
        }
    }

    pub fn with_variance(mut self) -> Self {
        self.head = RegressionHead::new(&self.name, self.in_channels, self.hidden, 3);
        self
    }

    pub fn has_variance(&self) -> bool {
        self.head.out_channels() == 3
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.head.init(store, rng)
    }

    /// Velocity `[X, Y, 2]` and, if enabled, `log sigma^2` `[X, Y, 1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Option<Var>)> {
        let raw = self.head.forward(g, p, x)?;
        if !self.has_variance() {
            return Ok((raw, None));
        }
        let v = g.slice_channels(raw, 0, 2)?;
        let s = g.slice_channels(raw, 2, 1)?;
        Ok((v, Some(s)))
    }
}

/// Switches for ablation tests; both are on in the real cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub projection: bool,
    pub gating: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            projection: true,
            gating: true,
        }
    }
}

/// Per-cell gate `sigmoid(<q', k> / sqrt(d_h))`, shape `[X, Y, 1]`.
pub fn attention_gate<T: Real>(g: &mut Graph<T>, q_projected: Var, k: Var) -> Result<Var> {
    let (sq, sk) = (g.shape(q_projected), g.shape(k));
    if sq != sk || sq.len() != 3 {
        return Err(shape_err("attention_gate", sq, sk));
    }
    let d = sq[2] as f64;
    let prod = g.mul(q_projected, k)?;
    let dot = g.sum_channels(prod);
    let scaled = g.mul_scalar(dot, T::of(1.0 / num_traits::Float::sqrt(d)));
    Ok(g.sigmoid(scaled))
}

/// `att * off_projected + (1 - att) * off_new`, clamped to `off_max`.
pub fn refine_offsets<T: Real>(
    g: &mut Graph<T>,
    att: Var,
    off_projected: Var,
    off_new: Var,
    geom: &GridGeometry,
) -> Result<Var> {
    if g.shape(off_projected) != g.shape(off_new) {
        return Err(shape_err("refine_offsets", g.shape(off_projected), g.shape(off_new)));
    }
    let a = g.broadcast_channels(att, 2)?;
    let keep = g.mul(a, off_projected)?;
    let na = g.one_minus(a);
    let fresh = g.mul(na, off_new)?;
    let blended = g.add(keep, fresh)?;
    Ok(clamp_offsets(g, blended, geom))
}

/// The recurrent state projection cell wrapped around a convolutional GRU.
#[derive(Debug, Clone)]
pub struct RspCell {
    pub geom: GridGeometry,
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub embed_channels: usize,
    pub ablation: Ablation,
    gru: ConvGru,
    velocity: VelocityHead,
    query: RegressionHead,
    key: RegressionHead,
}

impl RspCell {
    pub fn new(
        name: &str,
        geom: GridGeometry,
        input_channels: usize,
        hidden_channels: usize,
        embed_channels: usize,
        head_width: usize,
    ) -> Self {
        use alloc::format;
        Self {
            geom,
            input_channels,
            hidden_channels,
            embed_channels,
            ablation: Ablation::default(),
            gru: ConvGru::new(&format!("{name}.gru"), input_channels, hidden_channels),
            velocity: VelocityHead::new(&format!("{name}.vel"), hidden_channels, head_width),
            query: RegressionHead::new(&format!("{name}.query"), hidden_channels, head_width, embed_channels),
            key: RegressionHead::new(&format!("{name}.key"), input_channels, head_width, embed_channels),
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_variance(mut self) -> Self {
        self.velocity = self.velocity.with_variance();
        self
    }

    pub fn gru(&self) -> &ConvGru {
        &self.gru
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.gru.init(store, rng)?;
        self.velocity.init(store, rng)?;
        self.query.init(store, rng)?;
        self.key.init(store, rng)
    }

    /// `q` from the previous hidden state, `k` from the current input.
    pub fn compute_embeddings<T: Real>(&self, g: &mut Graph<T>, p: &Bound, h_prev: Var, input: Var) -> Result<EmbeddingPair> {
        Ok(EmbeddingPair {
            q: self.query.forward(g, p, h_prev)?,
            k: self.key.forward(g, p, input)?,
        })
    }

    fn check<T: Real>(&self, g: &Graph<T>, state: CellState, input: Var) -> Result<()> {
        self.geom.check_spatial("rsp_step", g.shape(input))?;
        self.geom.check_spatial("rsp_step", g.shape(state.h))?;
        self.geom.check_spatial("rsp_step", g.shape(state.off))?;
        if g.shape(input)[2] != self.input_channels || g.shape(state.h)[2] != self.hidden_channels {
            return Err(shape_err("rsp_step", g.shape(state.h), g.shape(input)));
        }
        Ok(())
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, p: &Bound, state: CellState, input: Var) -> Result<StepOutput> {
        self.check(g, state, input)?;
        let m = self.hidden_channels;
        let d = self.embed_channels;

        let q = self.query.forward(g, p, state.h)?;
        let (h_proj, off_proj, q_proj) = if self.ablation.projection {
            let payload = g.concat(&[state.h, state.off, q])?;
            let (moved, mass) = project_state(g, payload, state.off, &self.geom)?;
            let h = g.slice_channels(moved, 0, m)?;
            let rest = g.slice_channels(moved, m, 2 + d)?;
            let rest = normalize_projection(g, rest, mass, Merge::Mean)?;
            let off = g.slice_channels(rest, 0, 2)?;
            let q = g.slice_channels(rest, 2, d)?;
            (normalize_projection(g, h, mass, Merge::Sum)?, off, q)
        } else {
            (state.h, state.off, q)
        };

        let k = self.key.forward(g, p, input)?;
        let att = attention_gate(g, q_proj, k)?;

        let gated = if self.ablation.gating {
            let a = g.broadcast_channels(att, m)?;
            g.mul(a, h_proj)?
        } else {
            h_proj
        };
        let features = self.gru.step(g, p, gated, input)?;

        let (v_initial, log_var) = self.velocity.forward(g, p, features)?;
        let off_new = velocity_to_offset(g, v_initial, &self.geom)?;
        let off_refined = if self.ablation.gating {
            refine_offsets(g, att, off_proj, off_new, &self.geom)?
        } else {
            clamp_offsets(g, off_proj, &self.geom)
        };
        let v_refined = offset_to_velocity(g, off_refined, &self.geom);

        Ok(StepOutput {
            state: CellState {
                h: features,
                off: off_refined,
            },
            features,
            v_initial,
            v_refined,
            attention: Some(att),
            log_var,
        })
    }
}

/// Convolutional GRU plus velocity head, without projection or gating.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub geom: GridGeometry,
    pub input_channels: usize,
    pub hidden_channels: usize,
    gru: ConvGru,
    velocity: VelocityHead,
}

impl GruCell {
    pub fn new(name: &str, geom: GridGeometry, input_channels: usize, hidden_channels: usize, head_width: usize) -> Self {
        use alloc::format;
        Self {
            geom,
            input_channels,
            hidden_channels,
            gru: ConvGru::new(&format!("{name}.gru"), input_channels, hidden_channels),
            velocity: VelocityHead::new(&format!("{name}.vel"), hidden_channels, head_width),
        }
    }

    pub fn with_variance(mut self) -> Self {
        self.velocity = self.velocity.with_variance();
        self
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        self.gru.init(store, rng)?;
        self.velocity.init(store, rng)
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, p: &Bound, state: CellState, input: Var) -> Result<StepOutput> {
        self.geom.check_spatial("plain_gru_step", g.shape(input))?;
        let features = self.gru.step(g, p, state.h, input)?;
        let (v_initial, log_var) = self.velocity.forward(g, p, features)?;
        let off = velocity_to_offset(g, v_initial, &self.geom)?;
        let v_refined = offset_to_velocity(g, off, &self.geom);
        Ok(StepOutput {
            state: CellState { h: features, off },
            features,
            v_initial,
            v_refined,
            attention: None,
            log_var,
        })
    }
}
