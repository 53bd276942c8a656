//! Segmentation and velocity metrics over observed cells.

#[allow(unused_imports)]
use num_traits::Float;

use crate::model::NUM_CLASSES;
use crate::real::Real;

/// Counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    /// Adds every cell with positive observability.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8], observability: &[f32]) {
        for ((&p, &t), &o) in pred.iter().zip(gt).zip(observability) {
            if o > 0.0 {
                self.counts[t as usize][p as usize] += 1;
            }
        }
    }

    /// Per-class IoU; `None` for classes absent from both prediction and
    /// ground truth. The mean runs over the classes that are present.
    pub fn iou(&self) -> IouReport {
        let mut per_class = [None; NUM_CLASSES];
        for (c, slot) in per_class.iter_mut().enumerate() {
            let tp = self.counts[c][c];
            let gt: u64 = self.counts[c].iter().sum();
            let pred: u64 = (0..NUM_CLASSES).map(|t| self.counts[t][c]).sum();
            let union = gt + pred - tp;
            if union > 0 {
                *slot = Some(tp as f64 / union as f64);
            }
        }
        let present: alloc::vec::Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        };
        IouReport { per_class, mean }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IouReport {
    /// Indexed by class: free, unknown, occupied, moving.
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub mean: Option<f64>,
}

pub fn iou_metrics(pred: &[u8], gt: &[u8], observability: &[f32]) -> IouReport {
    let mut cm = ConfusionMatrix::default();
    cm.accumulate(pred, gt, observability);
    cm.iou()
}

/// Running mean absolute velocity error over both components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaeAccumulator {
    pub abs_sum: f64,
    pub cells: u64,
}

impl MaeAccumulator {
    /// Adds cells with `|gt| > min_speed` (strict) and positive observability.
    pub fn accumulate<T: Real>(&mut self, v_pred: &[T], gt: &[f32], observability: &[f32], min_speed: f64) {
        for (c, &o) in observability.iter().enumerate() {
            let (gx, gy) = (gt[2 * c] as f64, gt[2 * c + 1] as f64);
            if o > 0.0 && (gx != 0.0 || gy != 0.0) && gx.hypot(gy) > min_speed {
                self.abs_sum += (v_pred[2 * c].as_f64() - gx).abs() + (v_pred[2 * c + 1].as_f64() - gy).abs();
                self.cells += 1;
            }
        }
    }

    /// `None` when no cell qualified.
    pub fn mean(&self) -> Option<f64> {
        (self.cells > 0).then(|| self.abs_sum / (2 * self.cells) as f64)
    }
}

/// MAE over observed cells with non-zero ground-truth velocity.
pub fn velocity_mae<T: Real>(v_pred: &[T], gt: &[f32], observability: &[f32]) -> Option<f64> {
    let mut acc = MaeAccumulator::default();
    acc.accumulate(v_pred, gt, observability, 0.0);
    acc.mean()
}

/// Index of the largest logit per cell (first on ties).
pub fn argmax_classes<T: Real>(logits: &[T], classes: usize) -> alloc::vec::Vec<u8> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub iou: IouReport,
    pub mae: Option<f64>,
    /// MAE restricted to cells faster than the 3x3 speed limit.
    pub mae_fast: Option<f64>,
    pub params: usize,
    pub seconds: f64,
}
