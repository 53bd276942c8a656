use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsp_core::layers::ParameterStore;
use rsp_core::loss::{class_weights, velocity_weight, weighted_ce_loss, LossWeights};
use rsp_core::metrics::{argmax_classes, iou_metrics, velocity_mae, ConfusionMatrix, MaeAccumulator};
use rsp_core::model::{Architecture, Model, ModelConfig, NUM_CLASSES};
use rsp_core::optim::{Adam, AdamConfig, StepOutcome};
use rsp_core::projection::GridGeometry;
use rsp_core::sim::{generate_sequence, SimConfig};
use rsp_core::train::{epoch_order, evaluate, TrainConfig, Trainer};
use rsp_core::{Graph, Tensor};

struct Labeling {
    pred: Vec<u8>,
    gt: Vec<u8>,
    obs: Vec<f32>,
}

fn random_labeling(r: &mut ChaCha8Rng) -> Labeling {
    let n = r.gen_range(1..40);
    let k = r.gen_range(1..=NUM_CLASSES as u8);
    Labeling {
        pred: (0..n).map(|_| r.gen_range(0..k)).collect(),
        gt: (0..n).map(|_| r.gen_range(0..k)).collect(),
        obs: (0..n).map(|_| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(0.1..=1.0) }).collect(),
    }
}

/// IoU by counting sets directly.
fn brute_iou(l: &Labeling) -> ([Option<f64>; NUM_CLASSES], Option<f64>) {
    let mut per = [None; NUM_CLASSES];
    for (c, slot) in per.iter_mut().enumerate() {
        let c = c as u8;
        let cells: Vec<usize> = (0..l.gt.len()).filter(|&i| l.obs[i] > 0.0).collect();
        let inter = cells.iter().filter(|&&i| l.gt[i] == c && l.pred[i] == c).count();
        let union = cells.iter().filter(|&&i| l.gt[i] == c || l.pred[i] == c).count();
        if union > 0 {
            *slot = Some(inter as f64 / union as f64);
        }
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    (per, mean)
}

#[test]
fn iou_matches_brute_force_on_random_labelings() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let l = random_labeling(&mut r);
        let got = iou_metrics(&l.pred, &l.gt, &l.obs);
        let (per, mean) = brute_iou(&l);
        assert_eq!(got.per_class, per);
        assert_eq!(got.mean, mean);
    }
}

#[test]
fn mae_matches_brute_force_on_random_fields() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let n = r.gen_range(1..30);
        let gt: Vec<f32> = (0..2 * n)
            .map(|_| if r.gen_bool(0.4) { 0.0 } else { r.gen_range(-8.0f32..8.0) })
            .collect();
        let pred: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-8.0..8.0)).collect();
        let obs: Vec<f32> = (0..n).map(|_| if r.gen_bool(0.2) { 0.0 } else { 1.0 }).collect();
        let mut sum = 0.0;
        let mut count = 0;
        for c in 0..n {
            let (gx, gy) = (gt[2 * c] as f64, gt[2 * c + 1] as f64);
            if obs[c] > 0.0 && (gx != 0.0 || gy != 0.0) {
                sum += (pred[2 * c] - gx).abs() + (pred[2 * c + 1] - gy).abs();
                count += 1;
            }
        }
        let want = (count > 0).then(|| sum / (2 * count) as f64);
        assert_eq!(velocity_mae(&pred, &gt, &obs), want);
    }
}

#[test]
fn mae_example_and_speed_filter() {
    let gt = [3.0f32, 4.0, 1.0, 0.0, 0.0, 0.0];
    let pred = [2.0f64, 6.0, 1.0, 1.0, 5.0, 5.0];
    let obs = [1.0f32, 1.0, 1.0];
    assert_eq!(velocity_mae(&pred, &gt, &obs), Some((1.0 + 2.0 + 0.0 + 1.0) / 4.0));
    let mut fast = MaeAccumulator::default();
    fast.accumulate(&pred, &gt, &obs, 4.9);
    assert_eq!(fast.mean(), Some(1.5));
    let mut none = MaeAccumulator::default();
    none.accumulate(&pred, &gt, &obs, 5.0);
    assert_eq!(none.mean(), None);
}

#[test]
fn absent_classes_report_none() {
    let r = iou_metrics(&[0, 0, 2], &[0, 2, 2], &[1.0, 1.0, 1.0]);
    assert_eq!(r.per_class, [Some(0.5), None, Some(0.5), None]);
    assert_eq!(r.mean, Some(0.5));
    assert_eq!(iou_metrics(&[1], &[1], &[0.0]).mean, None);
}

#[test]
fn confusion_matrix_accumulates_across_calls() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_labeling(&mut r), random_labeling(&mut r));
    let mut cm = ConfusionMatrix::default();
    cm.accumulate(&a.pred, &a.gt, &a.obs);
    cm.accumulate(&b.pred, &b.gt, &b.obs);
    let joined = Labeling {
        pred: [a.pred, b.pred].concat(),
        gt: [a.gt, b.gt].concat(),
        obs: [a.obs, b.obs].concat(),
    };
    assert_eq!(cm.iou(), iou_metrics(&joined.pred, &joined.gt, &joined.obs));
}

#[test]
fn argmax_takes_first_maximum() {
    assert_eq!(argmax_classes(&[0.0f64, 2.0, 2.0, 1.0, 5.0, 0.0, 0.0, 0.0], 4), vec![1, 0]);
}

proptest! {
    #[test]
    fn metrics_ignore_unobserved_cells(seed in 0u64..10_000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let l = random_labeling(&mut r);
        let mut scrambled = Labeling { pred: l.pred.clone(), gt: l.gt.clone(), obs: l.obs.clone() };
        for i in 0..l.obs.len() {
            if l.obs[i] == 0.0 {
                scrambled.pred[i] = r.gen_range(0..4);
                scrambled.gt[i] = r.gen_range(0..4);
            }
        }
        prop_assert_eq!(iou_metrics(&l.pred, &l.gt, &l.obs), iou_metrics(&scrambled.pred, &scrambled.gt, &scrambled.obs));
    }

    #[test]
    fn ce_loss_ignores_unobserved_cells(seed in 0u64..10_000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = r.gen_range(1..20);
        let gt: Vec<u8> = (0..n).map(|_| r.gen_range(0..4)).collect();
        let obs: Vec<f32> = (0..n).map(|_| if r.gen_bool(0.3) { 0.0 } else { 1.0 }).collect();
        let logits: Vec<f64> = (0..4 * n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let mut other = logits.clone();
        for c in 0..n {
            if obs[c] == 0.0 {
                for k in 0..4 {
                    other[4 * c + k] = r.gen_range(-30.0..30.0);
                }
            }
        }
        let w = [0.5, 0.0, 1.5, 2.0];
        let eval = |l: &[f64]| {
            let mut g = Graph::<f64>::new();
            let v = g.param(Tensor::new(&[n, 1, 4], l.to_vec()).unwrap());
            let loss = weighted_ce_loss(&mut g, v, &gt, &obs, &w).unwrap();
            g.backward_scalar(loss).unwrap();
            let grad = g.grad(v).unwrap().to_vec();
            (g.value(loss).data()[0], grad)
        };
        let (la, ga) = eval(&logits);
        let (lb, gb) = eval(&other);
        prop_assert_eq!(la, lb);
        for c in 0..n {
            if obs[c] == 0.0 {
                prop_assert!(ga[4 * c..4 * c + 4].iter().chain(&gb[4 * c..4 * c + 4]).all(|&d| d == 0.0));
            }
        }
    }

    #[test]
    fn class_weights_are_inverse_frequency(counts in prop::array::uniform4(0u64..1000)) {
        let w = class_weights(&counts);
        let present: Vec<usize> = (0..4).filter(|&c| counts[c] > 0).collect();
        if present.is_empty() {
            prop_assert_eq!(w, [1.0; 4]);
        } else {
            let mean: f64 = present.iter().map(|&c| w[c]).sum::<f64>() / present.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
            for &a in &present {
                for &b in &present {
                    prop_assert!((w[a] * counts[a] as f64 - w[b] * counts[b] as f64).abs() < 1e-9 * w[a] * counts[a] as f64);
                }
            }
            for c in 0..4 {
                if counts[c] == 0 {
                    prop_assert_eq!(w[c], 0.0);
                }
            }
        }
    }
}

#[test]
fn ce_loss_example() {
    // Uniform logits: loss is ln 4 per observed cell times its class weight.
    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::zeros(&[2, 1, 4]));
    let loss = weighted_ce_loss(&mut g, v, &[0, 3], &[1.0, 1.0], &[2.0, 1.0, 1.0, 0.5]).unwrap();
    let want = (2.0 + 0.5) / 2.0 * 4.0f64.ln();
    assert!((g.value(loss).data()[0] - want).abs() < 1e-12);
}

#[test]
fn velocity_weight_examples() {
    assert_eq!(velocity_weight(1000, 100), 10.0);
    assert_eq!(velocity_weight(100_000, 10), 100.0);
    assert_eq!(velocity_weight(50, 0), 1.0);
}

#[test]
fn dataset_weights_from_frames() {
    let geom = GridGeometry::new(16, 16, 1.0, 10.0).unwrap();
    let cfg = SimConfig {
        seq_len: 4,
        ..SimConfig::default()
    };
    let frames = generate_sequence(&cfg, &geom, 3).unwrap();
    let w = LossWeights::from_frames(&frames);
    let mut counts = [0u64; 4];
    let mut moving = 0u64;
    for f in &frames {
        for c in 0..f.cells() {
            if f.observability[c] > 0.0 {
                counts[f.gt_class[c] as usize] += 1;
            }
            moving += (f.speed(c) > 0.0) as u64;
        }
    }
    assert_eq!(w.class, class_weights(&counts));
    assert_eq!(w.class[1], 0.0, "unknown cells are never observed");
    assert_eq!(w.velocity_nonzero, velocity_weight(16 * 16 * 4, moving));
    let mut rev = frames.clone();
    rev.reverse();
    assert_eq!(LossWeights::from_frames(&rev), w);
}

fn scalar_store(v: f64) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    s.insert("x", Tensor::from_f64(&[1], &[v]).unwrap()).unwrap();
    s
}

fn grad(v: f64) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([("x".to_string(), vec![v])])
}

#[test]
fn adam_minimises_a_quadratic() {
    let mut store = scalar_store(5.0);
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    });
    for _ in 0..500 {
        let x = store.get("x").unwrap().data()[0];
        opt.step(&mut store, &grad(2.0 * (x - 1.5))).unwrap();
    }
    assert!((store.get("x").unwrap().data()[0] - 1.5).abs() < 1e-2);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    for g in [1e-3, 0.7, -40.0] {
        let mut store = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        opt.step(&mut store, &grad(g)).unwrap();
        let x = store.get("x").unwrap().data()[0];
        assert!((x + 0.01 * g.signum()).abs() < 1e-6, "{g}: {x}");
    }
}

#[test]
fn adam_skips_non_finite_gradients() {
    let mut store = scalar_store(2.0);
    let mut opt = Adam::new(AdamConfig::default());
    assert_eq!(opt.step(&mut store, &grad(f64::NAN)).unwrap(), StepOutcome::SkippedNonFinite);
    assert_eq!(opt.step(&mut store, &grad(f64::INFINITY)).unwrap(), StepOutcome::SkippedNonFinite);
    assert_eq!(store.get("x").unwrap().data()[0], 2.0);
    assert_eq!(opt.step(&mut store, &grad(1.0)).unwrap(), StepOutcome::Applied);
    assert!(opt.step(&mut store, &BTreeMap::new()).is_err());
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(50, 7, 0);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(50, 7, 0));
    assert_ne!(a, epoch_order(50, 7, 1));
    assert_ne!(a, epoch_order(50, 8, 0));
}

fn tiny_setup(arch: Architecture) -> (Model, Vec<Vec<rsp_core::sim::GridFrame>>) {
    let geom = GridGeometry::new(12, 12, 1.5, 10.0).unwrap();
    let mut c = ModelConfig::new(arch, geom);
    c.f = 4;
    c.m = 4;
    c.d_h = 2;
    c.head_width = 4;
    c.aspp_branch = 2;
    c.aspp_width = 4;
    c.aspp_rates = vec![1, 2];
    c.aspp_blocks = 1;
    let sim = SimConfig {
        objects: 1,
        obstacles: 1,
        seq_len: 4,
        rays: 180,
        ..SimConfig::default()
    };
    let seqs = (0..2).map(|s| generate_sequence(&sim, &geom, s).unwrap()).collect();
    (Model::build(&c).unwrap(), seqs)
}

#[test]
fn training_overfits_one_sequence() {
    for arch in [Architecture::SingleFrame, Architecture::Gru, Architecture::Rsp] {
        let (model, seqs) = tiny_setup(arch);
        let weights = LossWeights::from_frames(seqs[0].iter());
        let config = TrainConfig {
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            seq_len: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f64>::new(model, config, weights).unwrap();
        let (first, _) = t.train_window(&seqs[0]).unwrap();
        let mut last = first;
        for _ in 0..50 {
            let (l, outcome) = t.train_window(&seqs[0]).unwrap();
            assert_eq!(outcome, StepOutcome::Applied);
            last = l;
        }
        assert!(last.total < 0.7 * first.total, "{arch}: {} -> {}", first.total, last.total);
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let (model, seqs) = tiny_setup(Architecture::Rsp);
        let weights = LossWeights::from_frames(seqs.iter().flatten());
        let mut t = Trainer::<f32>::new(model, TrainConfig { seq_len: 2, ..TrainConfig::default() }, weights).unwrap();
        let stats = t.train_epoch(&seqs, 0).unwrap();
        let report = evaluate(&t.model, &t.params, &seqs).unwrap();
        let flat: Vec<f32> = t.params.iter().flat_map(|(_, v)| v.data().to_vec()).collect();
        (stats, report, flat)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.0.windows, 4);
}

#[test]
fn heteroscedastic_training_needs_a_variance_head() {
    let (model, _) = tiny_setup(Architecture::Rsp);
    let config = TrainConfig {
        heteroscedastic: true,
        ..TrainConfig::default()
    };
    assert!(Trainer::<f32>::new(model, config, LossWeights::default()).is_err());
}
