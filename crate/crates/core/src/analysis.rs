//! Measurements on hidden state: per-cell norms and the memory left behind
//! a moving object.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::layers::ParameterStore;
use crate::model::{forward_sequence, Model};
use crate::real::Real;
use crate::sim::{object_footprint, render_frame, single_object_world, step_world, SimConfig};
use crate::tensor::Tensor;

/// L2 norm of each cell's channel vector.
pub fn cell_norms<T: Real>(h: &Tensor<T>) -> Vec<f64> {
    h.data()
        .chunks(h.channels())
        .map(|c| num_traits::Float::sqrt(c.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>()))
        .collect()
}

/// Cells covered in any earlier footprint but not in the last one.
pub fn vacated_cells(footprints: &[Vec<bool>]) -> Vec<bool> {
    let Some((last, earlier)) = footprints.split_last() else {
        return Vec::new();
    };
    (0..last.len())
        .map(|c| !last[c] && earlier.iter().any(|f| f[c]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrailMeasurement {
    /// Mean hidden norm over vacated cells after the last frame.
    pub trail: f64,
    /// Mean hidden norm over the object's current footprint.
    pub object: f64,
    pub trail_cells: usize,
}

/// Drives one object at `speed` along +x for `frames` frames through the
/// model and measures hidden-state norms behind and on the object.
pub fn measure_trail<T: Real>(
    model: &Model,
    params: &ParameterStore<T>,
    sim: &SimConfig,
    speed: f64,
    frames: usize,
    seed: u64,
) -> Result<TrailMeasurement> {
    use rand::SeedableRng;
    if frames < 2 {
        return Err(invalid("measure_trail", "need at least two frames"));
    }
    let geom = *model.geom();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut w = single_object_world(&geom, speed, seed);
    let mut inputs = Vec::with_capacity(frames);
    let mut footprints = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 {
            w = step_world(&w, 1.0 / geom.frame_rate)?;
        }
        inputs.push(render_frame(&w, sim, &geom, &mut rng).input_tensor::<T>());
        footprints.push(object_footprint(&w, &geom, 0));
    }
    let mut state = model.zero_state();
    let outs = forward_sequence(model, params, &inputs, &mut state)?;
    let norms = cell_norms(&outs[frames - 1].hidden);
    let trail = vacated_cells(&footprints);
    let mean_over = |mask: &[bool]| {
        let (s, n) = norms
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (if n > 0 { s / n as f64 } else { 0.0 }, n)
    };
    let (trail_mean, trail_cells) = mean_over(&trail);
    let (object, _) = mean_over(&footprints[frames - 1]);
    if trail_cells == 0 {
        return Err(invalid("measure_trail", "object did not vacate any cell"));
    }
    Ok(TrailMeasurement {
        trail: trail_mean,
        object,
        trail_cells,
    })
}
