//! Training objectives. Every loss is observability-weighted so that cells
//! the sensor never saw contribute exactly nothing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::model::NUM_CLASSES;
use crate::real::Real;
use crate::sim::GridFrame;
use crate::tensor::Tensor;

/// Cap on the up-weighting of cells with non-zero velocity.
pub const MAX_VELOCITY_WEIGHT: f64 = 100.0;
/// Bounds applied to a predicted `log sigma^2`.
pub const LOG_VAR_RANGE: (f64, f64) = (-6.0, 6.0);

/// Dataset-level loss weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Per-class weight, inversely proportional to class frequency over
    /// observed cells and normalised to mean 1 over the classes present.
    pub class: [f64; NUM_CLASSES],
    /// Weight of cells whose ground-truth velocity is non-zero.
    pub velocity_nonzero: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: [1.0; NUM_CLASSES],
            velocity_nonzero: 1.0,
        }
    }
}

impl LossWeights {
    /// Counts are integers, so the result does not depend on frame order.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a GridFrame>) -> Self {
        let mut class_counts = [0u64; NUM_CLASSES];
        let mut cells = 0u64;
        let mut moving_cells = 0u64;
        for f in frames {
            for c in 0..f.cells() {
                cells += 1;
                if f.gt_velocity[2 * c] != 0.0 || f.gt_velocity[2 * c + 1] != 0.0 {
                    moving_cells += 1;
                }
                if f.observability[c] > 0.0 {
                    class_counts[f.gt_class[c] as usize] += 1;
                }
            }
        }
        Self {
            class: class_weights(&class_counts),
            velocity_nonzero: velocity_weight(cells, moving_cells),
        }
    }

    /// Per-cell weights for the velocity loss: observability, times
    /// `velocity_nonzero` where the target is non-zero.
    pub fn velocity_cells(&self, frame: &GridFrame) -> Vec<f64> {
        (0..frame.cells())
            .map(|c| {
                let nz = frame.gt_velocity[2 * c] != 0.0 || frame.gt_velocity[2 * c + 1] != 0.0;
                frame.observability[c] as f64 * if nz { self.velocity_nonzero } else { 1.0 }
            })
            .collect()
    }
}

/// `w_c ∝ 1 / freq_c`, mean 1 over classes that occur; absent classes get 0.
pub fn class_weights(counts: &[u64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let total: u64 = counts.iter().sum();
    let mut w = [0.0; NUM_CLASSES];
    if total == 0 {
        return [1.0; NUM_CLASSES];
    }
    let mut present = 0usize;
    for (wc, &n) in w.iter_mut().zip(counts) {
        if n > 0 {
            *wc = total as f64 / n as f64;
            present += 1;
        }
    }
    let mean = w.iter().sum::<f64>() / present as f64;
    for wc in &mut w {
        *wc /= mean;
    }
    w
}

/// `min(cells / nonzero_cells, 100)`, or 1 when nothing moves.
pub fn velocity_weight(cells: u64, nonzero: u64) -> f64 {
    if nonzero == 0 {
        1.0
    } else {
        (cells as f64 / nonzero as f64).min(MAX_VELOCITY_WEIGHT)
    }
}

fn observed(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w > 0.0).count()
}

/// Softmax cross-entropy per cell, weighted by the class weight of the
/// target and the cell's observability, averaged over observed cells.
pub fn weighted_ce_loss<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    gt_class: &[u8],
    observability: &[f32],
    class_weights: &[f64; NUM_CLASSES],
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let k = *shape.last().unwrap_or(&0);
    let cells = g.value(logits).cells();
    if k != NUM_CLASSES || gt_class.len() != cells || observability.len() != cells {
        return Err(shape_err("weighted_ce_loss", &shape, &[gt_class.len(), observability.len()]));
    }
    let n = observability.iter().filter(|&&o| o > 0.0).count();
    let mut mask = vec![T::zero(); cells * k];
    if n > 0 {
        let inv = 1.0 / n as f64;
        for c in 0..cells {
            let cls = gt_class[c] as usize;
            mask[c * k + cls] = T::of(observability[c] as f64 * class_weights[cls] * inv);
        }
    }
    let logp = g.log_softmax(logits);
    let m = g.constant(Tensor::new(&shape, mask)?);
    let picked = g.mul(logp, m)?;
    let s = g.sum(picked);
    Ok(g.mul_scalar(s, -T::one()))
}

/// Squared error over both velocity components per cell, times the cell
/// weight, averaged over cells with positive weight.
pub fn velocity_l2_loss<T: Real>(g: &mut Graph<T>, v_pred: Var, gt_velocity: &[f32], cell_weights: &[f64]) -> Result<Var> {
    let shape = g.shape(v_pred).to_vec();
    let cells = cell_weights.len();
    if shape.last() != Some(&2) || g.value(v_pred).len() != 2 * cells || gt_velocity.len() != 2 * cells {
        return Err(shape_err("velocity_l2_loss", &shape, &[gt_velocity.len(), cells]));
    }
    let n = observed(cell_weights).max(1) as f64;
    let gt = g.constant(Tensor::new(&shape, gt_velocity.iter().map(|&v| T::of(v as f64)).collect())?);
    let w = g.constant(Tensor::new(
        &shape,
        cell_weights.iter().flat_map(|&w| [T::of(w / n), T::of(w / n)]).collect(),
    )?);
    let d = g.sub(v_pred, gt)?;
    let sq = g.mul(d, d)?;
    let ws = g.mul(sq, w)?;
    Ok(g.sum(ws))
}

/// Isotropic Gaussian negative log-likelihood per cell,
/// `exp(-s) / 2 * |gt - mu|^2 + s / 2` with `s = log sigma^2` clamped to
/// [`LOG_VAR_RANGE`]. Averaged over all cells, or weighted by `cell_weights`
/// and averaged over cells with positive weight.
pub fn heteroscedastic_loss<T: Real>(
    g: &mut Graph<T>,
    mu: Var,
    log_var: Var,
    gt: &[f32],
    cell_weights: Option<&[f64]>,
) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    let cells = g.value(mu).cells();
    if shape.last() != Some(&2) || gt.len() != 2 * cells || g.value(log_var).len() != cells {
        return Err(shape_err("heteroscedastic_loss", &shape, g.shape(log_var)));
    }
    let (w, n) = match cell_weights {
        Some(w) if w.len() == cells => (w.to_vec(), observed(w).max(1) as f64),
        Some(w) => return Err(shape_err("heteroscedastic_loss", &shape, &[w.len()])),
        None => (vec![1.0; cells], cells as f64),
    };
    let gt = g.constant(Tensor::new(&shape, gt.iter().map(|&v| T::of(v as f64)).collect())?);
    let d = g.sub(gt, mu)?;
    let sq = g.mul(d, d)?;
    let sq = g.sum_channels(sq);
    let s = g.clamp(log_var, T::of(LOG_VAR_RANGE.0), T::of(LOG_VAR_RANGE.1));
    let neg = g.mul_scalar(s, -T::one());
    let prec = g.exp(neg);
    let fit = g.mul(prec, sq)?;
    let per = g.add(fit, s)?;
    let wt = g.constant(Tensor::new(g.shape(per), w.iter().map(|&x| T::of(0.5 * x / n)).collect())?);
    let weighted = g.mul(per, wt)?;
    Ok(g.sum(weighted))
}
