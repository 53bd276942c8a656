//! Forward warping of recurrent state by per-cell metric offsets.
//!
//! Each source cell emits its payload to the (up to) four cells around
//! `centre + offset / cell_size` with bilinear weights. Contributions that
//! land on the same cell are summed, the received weight is reported as a
//! mass channel, and anything falling outside the grid is dropped.

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Raster extent, cell size and frame rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub x: usize,
    pub y: usize,
    /// Edge length of one square cell in meters.
    pub cell_size: f64,
    /// Frames per second.
    pub frame_rate: f64,
}

impl GridGeometry {
    pub fn new(x: usize, y: usize, cell_size: f64, frame_rate: f64) -> Result<Self> {
        let g = Self {
            x,
            y,
            cell_size,
            frame_rate,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || !(self.cell_size > 0.0) || !(self.frame_rate > 0.0) {
            return Err(Error::Config(alloc::format!("invalid grid geometry {self:?}")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.x * self.y
    }

    /// Largest offset magnitude per axis, `0.45 * min(X, Y) * cell_size`.
    pub fn off_max(&self) -> f64 {
        0.45 * self.x.min(self.y) as f64 * self.cell_size
    }

    /// The same extent coarsened by `factor` in both axes.
    pub fn coarsened(&self, factor: usize) -> Self {
        Self {
            x: self.x / factor,
            y: self.y / factor,
            cell_size: self.cell_size * factor as f64,
            frame_rate: self.frame_rate,
        }
    }

    pub(crate) fn check_spatial(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.x || shape[1] != self.y {
            return Err(crate::error::shape_err(op, shape, &[self.x, self.y]));
        }
        Ok(())
    }
}

/// How collisions of several sources on one target are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    /// Keep the summed payload.
    Sum,
    /// Divide by `max(mass, 1)`.
    Mean,
}

/// Componentwise clamp of an offset field to `[-off_max, off_max]`.
pub fn clamp_offsets<T: Real>(g: &mut Graph<T>, off: Var, geom: &GridGeometry) -> Var {
    let m = T::of(geom.off_max());
    g.clamp(off, -m, m)
}

/// `off = v / FR`, clamped to the geometry's `off_max`.
pub fn velocity_to_offset<T: Real>(g: &mut Graph<T>, v: Var, geom: &GridGeometry) -> Result<Var> {
    geom.check_spatial("velocity_to_offset", g.shape(v))?;
    let off = g.mul_scalar(v, T::of(1.0 / geom.frame_rate));
    Ok(clamp_offsets(g, off, geom))
}

/// `v = off * FR`.
pub fn offset_to_velocity<T: Real>(g: &mut Graph<T>, off: Var, geom: &GridGeometry) -> Var {
    g.mul_scalar(off, T::of(geom.frame_rate))
}

/// Splats `payload [X, Y, C]` along `off [X, Y, 2]` (meters). Returns the
/// summed payload and the received mass `[X, Y, 1]`.
pub fn project_state<T: Real>(g: &mut Graph<T>, payload: Var, off: Var, geom: &GridGeometry) -> Result<(Var, Var)> {
    geom.check_spatial("project_state", g.shape(payload))?;
    let c = g.shape(payload)[2];
    let both = g.splat(payload, off, T::of(geom.cell_size))?;
    let moved = g.slice_channels(both, 0, c)?;
    let mass = g.slice_channels(both, c, 1)?;
    Ok((moved, mass))
}

pub fn normalize_projection<T: Real>(g: &mut Graph<T>, moved: Var, mass: Var, merge: Merge) -> Result<Var> {
    match merge {
        Merge::Sum => Ok(moved),
        Merge::Mean => {
            let c = g.shape(moved)[2];
            let denom = g.clamp(mass, T::one(), T::infinity());
            let denom = g.broadcast_channels(denom, c)?;
            g.div(moved, denom)
        }
    }
}

/// Fastest motion a `kernel x kernel` convolution over two consecutive
/// frames can still relate: one kernel radius per frame.
pub fn max_capturable_speed(kernel: usize, geom: &GridGeometry) -> Result<f64> {
    if kernel % 2 == 0 {
        return Err(invalid("max_capturable_speed", "kernel size must be odd"));
    }
    Ok(((kernel - 1) / 2) as f64 * geom.cell_size * geom.frame_rate)
}
