mod common;

use std::collections::BTreeSet;

use common::*;
use rsp_core::cell::CellState;
use rsp_core::model::{forward_sequence, Architecture, Model, ModelConfig, NUM_CLASSES};
use rsp_core::projection::GridGeometry;
use rsp_core::{Graph, Tensor};

fn config(arch: Architecture) -> ModelConfig {
    let mut c = ModelConfig::new(arch, GridGeometry::new(8, 8, 0.5, 10.0).unwrap());
    c.s = 2;
    c.f = 4;
    c.m = 5;
    c.d_h = 3;
    c.head_width = 4;
    c.aspp_branch = 2;
    c.aspp_width = 4;
    c.aspp_rates = vec![1, 2];
    c.aspp_blocks = 2;
    c.pyramid_m = 3;
    c
}

fn frames(n: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| tensor(&random_field(8, 8, 2, 1.0, &mut r))).collect()
}

fn names(arch: Architecture) -> BTreeSet<String> {
    let m = Model::build(&config(arch)).unwrap();
    m.init_params::<f64>(0).unwrap().names().map(String::from).collect()
}

#[test]
fn rsp_adds_only_query_and_key_heads() {
    let gru = names(Architecture::Gru);
    let rsp = names(Architecture::Rsp);
    assert!(gru.is_subset(&rsp));
    let extra: Vec<_> = rsp.difference(&gru).collect();
    assert!(!extra.is_empty());
    assert!(extra.iter().all(|n| n.starts_with("rnn.query.") || n.starts_with("rnn.key.")), "{extra:?}");

    let g = Model::build(&config(Architecture::Gru)).unwrap().init_params::<f64>(0).unwrap();
    let r = Model::build(&config(Architecture::Rsp)).unwrap().init_params::<f64>(0).unwrap();
    for n in &gru {
        assert_eq!(g.get(n).unwrap().shape(), r.get(n).unwrap().shape(), "{n}");
    }
}

#[test]
fn large_single_frame_is_capacity_aligned() {
    let gru = Model::build(&config(Architecture::Gru)).unwrap().param_count().unwrap();
    let large = Model::build(&config(Architecture::SingleFrameLarge)).unwrap();
    assert!(large.param_count().unwrap() >= gru);
    let mut smaller = config(Architecture::SingleFrame);
    smaller.f = large.f_effective - 1;
    assert!(Model::build(&smaller).unwrap().param_count().unwrap() < gru);
    assert_eq!(names(Architecture::SingleFrame), names(Architecture::SingleFrameLarge));
}

#[test]
fn every_architecture_produces_well_shaped_outputs() {
    let xs = frames(3, 1);
    for arch in Architecture::ALL {
        assert_eq!(Architecture::parse(arch.name()).unwrap(), arch);
        let model = Model::build(&config(arch)).unwrap();
        let params = model.init_params::<f64>(3).unwrap();
        let mut state = model.zero_state();
        let outs = forward_sequence(&model, &params, &xs, &mut state).unwrap();
        assert_eq!(outs.len(), 3);
        for o in &outs {
            assert_eq!(o.class_logits.shape(), &[8, 8, NUM_CLASSES]);
            assert_eq!(o.v_initial.shape(), &[8, 8, 2]);
            assert_eq!(o.v_refined.shape(), &[8, 8, 2]);
            assert_eq!(o.attention.is_some(), arch == Architecture::Rsp);
            assert!(o.log_var.is_none());
            assert!(o.class_logits.all_finite());
        }
    }
    assert!(Architecture::parse("lstm").is_err());
}

#[test]
fn stateful_halves_equal_full_sequence() {
    let xs = frames(12, 2);
    for arch in Architecture::ALL {
        let model = Model::build(&config(arch)).unwrap();
        let params = model.init_params::<f64>(4).unwrap();
        let mut s_full = model.zero_state();
        let full = forward_sequence(&model, &params, &xs, &mut s_full).unwrap();
        let mut s = model.zero_state();
        let mut halves = forward_sequence(&model, &params, &xs[..6], &mut s).unwrap();
        halves.extend(forward_sequence(&model, &params, &xs[6..], &mut s).unwrap());
        assert_eq!(full, halves, "{arch}");
        assert_eq!(s_full, s);
    }
}

#[test]
fn unrolled_graph_matches_stepwise_rollout() {
    let xs = frames(5, 3);
    for arch in [Architecture::Gru, Architecture::Rsp, Architecture::Pyramid] {
        let model = Model::build(&config(arch)).unwrap();
        let params = model.init_params::<f64>(5).unwrap();
        let mut state = model.zero_state();
        let stepwise = forward_sequence(&model, &params, &xs, &mut state).unwrap();

        let mut g = Graph::<f64>::new();
        let bound = params.bind(&mut g);
        let cs: Vec<CellState> = model.zero_state::<f64>().iter().map(|s| s.bind(&mut g)).collect();
        let inputs: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let (outs, _) = model.unroll(&mut g, &bound, cs, &inputs).unwrap();
        for (a, b) in outs.iter().zip(&stepwise) {
            assert!(max_abs_diff(g.value(a.v_refined).data(), b.v_refined.data()) < 1e-12);
            assert!(max_abs_diff(g.value(a.class_logits).data(), b.class_logits.data()) < 1e-12);
        }
    }
}

#[test]
fn memory_changes_predictions() {
    let xs = frames(4, 6);
    for arch in [Architecture::Gru, Architecture::Rsp, Architecture::Pyramid] {
        let model = Model::build(&config(arch)).unwrap();
        let params = model.init_params::<f64>(7).unwrap();
        let mut warm = model.zero_state();
        let _ = forward_sequence(&model, &params, &xs[..3], &mut warm).unwrap();
        let a = forward_sequence(&model, &params, &xs[3..], &mut warm).unwrap();
        let mut cold = model.zero_state();
        let b = forward_sequence(&model, &params, &xs[3..], &mut cold).unwrap();
        assert_ne!(a[0].v_initial, b[0].v_initial, "{arch}");
    }
    let model = Model::build(&config(Architecture::SingleFrame)).unwrap();
    let params = model.init_params::<f64>(7).unwrap();
    let mut s = model.zero_state();
    let a = forward_sequence(&model, &params, &xs[3..], &mut s).unwrap();
    let b = forward_sequence(&model, &params, &xs[..1], &mut s).unwrap();
    let c = forward_sequence(&model, &params, &xs[3..], &mut s).unwrap();
    assert_ne!(a[0].v_initial, b[0].v_initial);
    assert_eq!(a, c);
}

fn avg_pool(f: &Field) -> Field {
    let mut out = Field::zeros(f.x / 2, f.y / 2, f.c);
    for i in 0..f.x / 2 {
        for j in 0..f.y / 2 {
            for k in 0..f.c {
                let s = f.at(2 * i, 2 * j, k) + f.at(2 * i + 1, 2 * j, k) + f.at(2 * i, 2 * j + 1, k) + f.at(2 * i + 1, 2 * j + 1, k);
                out.set(i, j, k, s / 4.0);
            }
        }
    }
    out
}

fn upsample(f: &Field, factor: usize) -> Field {
    let mut out = Field::zeros(f.x * factor, f.y * factor, f.c);
    for i in 0..out.x {
        for j in 0..out.y {
            for k in 0..f.c {
                out.set(i, j, k, f.at(i / factor, j / factor, k));
            }
        }
    }
    out
}

#[test]
fn pyramid_matches_reference() {
    let cfg = config(Architecture::Pyramid);
    let model = Model::build(&cfg).unwrap();
    let pyramid = model.pyramid().unwrap();
    let mut params = model.init_params::<f64>(8).unwrap();
    let mut r = rng(9);
    jitter(&mut params, 0.2, &mut r);
    let x = random_field(8, 8, cfg.f, 1.0, &mut r);
    let hs: Vec<Field> = (0..3).map(|l| random_field(8 >> l, 8 >> l, cfg.pyramid_m, 1.0, &mut r)).collect();

    let mut g = Graph::<f64>::new();
    let bound = params.bind(&mut g);
    let states: Vec<CellState> = hs
        .iter()
        .map(|h| CellState {
            h: g.constant(tensor(h)),
            off: g.constant(Tensor::zeros(&[h.x, h.y, 2])),
        })
        .collect();
    let xv = g.constant(tensor(&x));
    let (features, next) = pyramid.features(&mut g, &bound, &states, xv).unwrap();

    let mut xi = x.clone();
    let mut ups = Vec::new();
    for (l, h) in hs.iter().enumerate() {
        if l > 0 {
            xi = avg_pool(&xi);
        }
        let hn = gru(&params, &format!("rnn.level{l}"), h, &xi);
        assert!(max_abs_diff(g.value(next[l]).data(), &hn.v) < 1e-12);
        ups.push(upsample(&hn, 1 << l));
    }
    let cat = Field::concat(&ups.iter().collect::<Vec<_>>());
    let want = conv_block(&params, "rnn.fuse", &cat, 1, cfg.m, 1, leaky);
    assert!(max_abs_diff(g.value(features).data(), &want.v) < 1e-12);
}

#[test]
fn pyramid_needs_divisible_grid() {
    let mut c = config(Architecture::Pyramid);
    c.geom = GridGeometry::new(10, 8, 0.5, 10.0).unwrap();
    assert!(Model::build(&c).is_err());
    c.arch = Architecture::Gru;
    assert!(Model::build(&c).is_ok());
}

#[test]
fn heteroscedastic_head_adds_one_channel() {
    let mut c = config(Architecture::Rsp);
    let base = Model::build(&c).unwrap().param_count().unwrap();
    c.heteroscedastic = true;
    let model = Model::build(&c).unwrap();
    // One extra output channel of the final 1x1 projection: weight + bias.
    assert_eq!(model.param_count().unwrap(), base + c.head_width + 1);
    let params = model.init_params::<f64>(0).unwrap();
    let mut s = model.zero_state();
    let out = forward_sequence(&model, &params, &frames(1, 0), &mut s).unwrap();
    assert_eq!(out[0].log_var.as_ref().unwrap().shape(), &[8, 8, 1]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let model = Model::build(&config(Architecture::Rsp)).unwrap();
    let params = model.init_params::<f64>(0).unwrap();
    let mut s = model.zero_state();
    let bad = vec![Tensor::<f64>::zeros(&[8, 8, 3])];
    assert!(forward_sequence(&model, &params, &bad, &mut s).is_err());
    assert!(forward_sequence(&model, &params, &[], &mut s).is_err());
}

#[test]
fn initialisation_depends_only_on_seed() {
    let model = Model::build(&config(Architecture::Rsp)).unwrap();
    let a = model.init_params::<f64>(11).unwrap();
    let b = model.init_params::<f64>(11).unwrap();
    let c = model.init_params::<f64>(12).unwrap();
    let flat = |p: &rsp_core::layers::ParameterStore<f64>| -> Vec<f64> {
        p.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn trail_measurement_covers_vacated_cells() {
    use rsp_core::analysis::measure_trail;
    use rsp_core::sim::SimConfig;
    let mut c = config(Architecture::Rsp);
    c.s = 1;
    c.geom = GridGeometry::new(16, 16, 1.0, 10.0).unwrap();
    let model = Model::build(&c).unwrap();
    let params = model.init_params::<f64>(0).unwrap();
    let sim = SimConfig::default();
    let a = measure_trail(&model, &params, &sim, 10.0, 4, 1).unwrap();
    // 3 m of travel over 1 m cells, 2 m wide object.
    assert_eq!(a.trail_cells, 6);
    assert!(a.trail >= 0.0 && a.object > 0.0);
    assert_eq!(a, measure_trail(&model, &params, &sim, 10.0, 4, 1).unwrap());
    assert!(measure_trail(&model, &params, &sim, 10.0, 1, 1).is_err());
    assert!(measure_trail(&model, &params, &sim, 0.0, 4, 1).is_err());
}
