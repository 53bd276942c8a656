//! Truncated-BPTT training and evaluation over in-memory sequences.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell::CellState;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Bound, ParameterStore};
use crate::loss::{heteroscedastic_loss, velocity_l2_loss, weighted_ce_loss, LossWeights};
use crate::metrics::{argmax_classes, ConfusionMatrix, MaeAccumulator, MetricsReport};
use crate::model::{forward_sequence, Model, NUM_CLASSES};
use crate::optim::{Adam, AdamConfig, StepOutcome};
use crate::projection::max_capturable_speed;
use crate::real::Real;
use crate::sim::GridFrame;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Frames per truncated-BPTT window.
    pub seq_len: usize,
    /// Coefficient of the segmentation loss.
    pub ce_weight: f64,
    /// Coefficient of the summed velocity terms.
    pub velocity_weight: f64,
    /// Weight of the velocity loss on the head output before refinement.
    pub aux_weight: f64,
    /// Weight of the velocity loss on the refined output.
    pub refined_weight: f64,
    /// Replace the auxiliary L2 term by a Gaussian likelihood on offsets.
    pub heteroscedastic: bool,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Seeds parameter initialisation and the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 10,
            seq_len: 12,
            ce_weight: 1.0,
            velocity_weight: 1.0,
            aux_weight: 0.5,
            refined_weight: 1.0,
            heteroscedastic: false,
            clip_norm: None,
            seed: 0,
        }
    }
}

/// Scalar loss terms of one window, averaged over its frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub segmentation: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub loss: LossTerms,
    pub windows: usize,
    /// Windows whose update was dropped for non-finite gradients.
    pub skipped: usize,
}

/// Order in which sequences are visited in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    idx.shuffle(&mut rng);
    idx
}

pub struct Trainer<T> {
    pub model: Model,
    pub params: ParameterStore<T>,
    pub optimizer: Adam<T>,
    pub weights: LossWeights,
    pub config: TrainConfig,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model, config: TrainConfig, weights: LossWeights) -> Result<Self> {
        if config.seq_len == 0 {
            return Err(invalid("trainer", "seq_len must be positive"));
        }
        if config.heteroscedastic && !model.config.heteroscedastic {
            return Err(invalid("trainer", "heteroscedastic loss needs a variance head"));
        }
        let params = model.init_params(config.seed)?;
        Ok(Self {
            model,
            params,
            optimizer: Adam::new(config.adam),
            weights,
            config,
        })
    }

    /// Builds the loss of one window starting from zero memory.
    pub fn window_loss(&self, g: &mut Graph<T>, bound: &Bound, frames: &[GridFrame]) -> Result<(Var, Var, Var)> {
        let mut state: Vec<CellState> = self.model.zero_state::<T>().iter().map(|s| s.bind(g)).collect();
        let geom = *self.model.geom();
        let inv = T::of(1.0 / frames.len() as f64);
        let mut seg_terms = Vec::with_capacity(frames.len());
        let mut vel_terms = Vec::with_capacity(frames.len());
        for f in frames {
            let x = g.constant(f.input_tensor());
            let (out, next) = self.model.step(g, bound, &state, x)?;
            state = next;
            seg_terms.push(weighted_ce_loss(g, out.class_logits, &f.gt_class, &f.observability, &self.weights.class)?);

            let cw = self.weights.velocity_cells(f);
            let refined = velocity_l2_loss(g, out.v_refined, &f.gt_velocity, &cw)?;
            let refined = g.mul_scalar(refined, T::of(self.config.refined_weight));
            let aux = match (self.config.heteroscedastic, out.log_var) {
                (true, Some(s)) => {
                    let mu = g.mul_scalar(out.v_initial, T::of(1.0 / geom.frame_rate));
                    let gt: Vec<f32> = f.gt_velocity.iter().map(|&v| (v as f64 / geom.frame_rate) as f32).collect();
                    heteroscedastic_loss(g, mu, s, &gt, Some(&cw))?
                }
                _ => velocity_l2_loss(g, out.v_initial, &f.gt_velocity, &cw)?,
            };
            let aux = g.mul_scalar(aux, T::of(self.config.aux_weight));
            vel_terms.push(g.add(refined, aux)?);
        }
        let seg = sum_all(g, &seg_terms)?;
        let seg = g.mul_scalar(seg, inv * T::of(self.config.ce_weight));
        let vel = sum_all(g, &vel_terms)?;
        let vel = g.mul_scalar(vel, inv * T::of(self.config.velocity_weight));
        let total = g.add(seg, vel)?;
        Ok((total, seg, vel))
    }

    /// One optimizer step on one window.
    pub fn train_window(&mut self, frames: &[GridFrame]) -> Result<(LossTerms, StepOutcome)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let (total, seg, vel) = self.window_loss(&mut g, &bound, frames)?;
        let terms = LossTerms {
            total: g.value(total).data()[0].as_f64(),
            segmentation: g.value(seg).data()[0].as_f64(),
            velocity: g.value(vel).data()[0].as_f64(),
        };
        g.backward_scalar(total)?;
        let mut grads = bound.grads(&g);
        if let Some(limit) = self.config.clip_norm {
            let norm = grads.values().flatten().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            let norm = num_traits::Float::sqrt(norm);
            if norm > limit && norm.is_finite() {
                let s = T::of(limit / norm);
                grads.values_mut().flatten().for_each(|v| *v *= s);
            }
        }
        let outcome = self.optimizer.step(&mut self.params, &grads)?;
        Ok((terms, outcome))
    }

    /// Visits every sequence once, each split into `seq_len` windows.
    pub fn train_epoch(&mut self, sequences: &[Vec<GridFrame>], epoch: usize) -> Result<EpochStats> {
        let mut stats = EpochStats::default();
        for i in epoch_order(sequences.len(), self.config.seed, epoch) {
            for window in sequences[i].chunks(self.config.seq_len) {
                let (t, outcome) = self.train_window(window)?;
                stats.windows += 1;
                if outcome == StepOutcome::SkippedNonFinite {
                    stats.skipped += 1;
                    continue;
                }
                stats.loss.total += t.total;
                stats.loss.segmentation += t.segmentation;
                stats.loss.velocity += t.velocity;
            }
        }
        let n = (stats.windows - stats.skipped).max(1) as f64;
        stats.loss.total /= n;
        stats.loss.segmentation /= n;
        stats.loss.velocity /= n;
        Ok(stats)
    }
}

fn sum_all<T: Real>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Streams every sequence through the model with carried memory and scores
/// segmentation and refined velocity over observed cells.
pub fn evaluate<T: Real>(model: &Model, params: &ParameterStore<T>, sequences: &[Vec<GridFrame>]) -> Result<MetricsReport> {
    let fast = max_capturable_speed(3, model.geom())?;
    let mut cm = ConfusionMatrix::default();
    let mut mae = MaeAccumulator::default();
    let mut mae_fast = MaeAccumulator::default();
    for seq in sequences {
        let mut state = model.zero_state::<T>();
        let inputs: Vec<Tensor<T>> = seq.iter().map(GridFrame::input_tensor).collect();
        let outs = forward_sequence(model, params, &inputs, &mut state)?;
        for (f, o) in seq.iter().zip(&outs) {
            let pred = argmax_classes(o.class_logits.data(), NUM_CLASSES);
            cm.accumulate(&pred, &f.gt_class, &f.observability);
            mae.accumulate(o.v_refined.data(), &f.gt_velocity, &f.observability, 0.0);
            mae_fast.accumulate(o.v_refined.data(), &f.gt_velocity, &f.observability, fast);
        }
    }
    Ok(MetricsReport {
        iou: cm.iou(),
        mae: mae.mean(),
        mae_fast: mae_fast.mean(),
        params: params.count(),
        seconds: 0.0,
    })
}
