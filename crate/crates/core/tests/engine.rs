use proptest::prelude::*;
use rsp_core::gradcheck::suites::{self, LAYER_TOLERANCE};
use rsp_core::graph::PRIMITIVES;
use rsp_core::{Graph, Tensor, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn every_primitive_passes_twenty_random_checks() {
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    for seed in 0..20 {
        for r in suites::run("engine", seed).unwrap() {
            assert!(r.passed(), "seed {seed} {}: {:e}", r.name, r.max_rel_error);
            assert!(r.max_rel_error < LAYER_TOLERANCE);
            let prim = r.name.split('/').next().unwrap().to_string();
            *seen.entry(prim).or_default() += 1;
        }
    }
    for p in PRIMITIVES {
        assert!(seen.get(*p).copied().unwrap_or(0) >= 20, "{p} checked {:?} times", seen.get(*p));
    }
}

#[test]
fn forward_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let m = g.matmul(a, b).unwrap();
    assert_eq!(g.value(m).data(), &[19.0, 22.0, 43.0, 50.0]);

    let z = g.constant(t(&[1], &[0.0]));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).data(), &[0.5]);

    let l = g.constant(t(&[1, 1, 2], &[0.0, 0.0]));
    let ls = g.log_softmax(l);
    for v in g.value(ls).data() {
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }

    let x = g.constant(t(&[1, 1, 3], &[-2.0, 0.5, 9.0]));
    let c = g.clamp(x, -1.0, 1.0);
    assert_eq!(g.value(c).data(), &[-1.0, 0.5, 1.0]);
    let lr = g.leaky_relu(x, 0.1);
    assert_eq!(g.value(lr).data(), &[-0.2, 0.5, 9.0]);

    let p = g.constant(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
    let pooled = g.avg_pool2(p).unwrap();
    assert_eq!(g.value(pooled).data(), &[2.5]);
    let up = g.upsample2(pooled).unwrap();
    assert_eq!(g.value(up).data(), &[2.5; 4]);
}

#[test]
fn gradient_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[3.0, -1.5]));
    let sq = g.mul(x, x).unwrap();
    let y = g.sum(sq);
    g.backward_scalar(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0, -3.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1], &[2.0]));
    let e = g.exp(x);
    let l = g.ln(e);
    g.backward_scalar(l).unwrap();
    assert!((g.grad(x).unwrap()[0] - 1.0).abs() < 1e-15);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let p = g.param(t(&[2], &[3.0, 4.0]));
    let y = g.mul(c, p).unwrap();
    let s = g.sum(y);
    g.backward_scalar(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[1.0, 2.0]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    assert!(g.add(a, b).is_err());
    assert!(g.mul(a, b).is_err());
    assert!(g.matmul(a, b).is_err());
    let s = g.sum(a);
    assert!(g.backward(s, &t(&[2], &[1.0, 1.0])).is_err());
}

fn vector_fn(g: &mut Graph<f64>, x: Var) -> Var {
    let a = g.tanh(x);
    let b = g.mul(a, x).unwrap();
    let c = g.sigmoid(b);
    g.add(c, a).unwrap()
}

fn grads_for(x: &[f64], seed: &[f64]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let xv = g.param(t(&[x.len()], x));
    let y = vector_fn(&mut g, xv);
    g.backward(y, &t(&[seed.len()], seed)).unwrap();
    g.grad(xv).unwrap().to_vec()
}

proptest! {
    #[test]
    fn backward_is_linear_in_the_seed(
        x in prop::collection::vec(-2.0f64..2.0, 5),
        s1 in prop::collection::vec(-1.0f64..1.0, 5),
        s2 in prop::collection::vec(-1.0f64..1.0, 5),
        alpha in -3.0f64..3.0,
    ) {
        let combined: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| alpha * a + b).collect();
        let g1 = grads_for(&x, &s1);
        let g2 = grads_for(&x, &s2);
        let gc = grads_for(&x, &combined);
        for i in 0..5 {
            prop_assert!((gc[i] - (alpha * g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_builds_are_bit_identical(x in prop::collection::vec(-2.0f64..2.0, 5)) {
        let seed = vec![1.0; 5];
        prop_assert_eq!(grads_for(&x, &seed), grads_for(&x, &seed));
    }

    #[test]
    fn repeated_backward_accumulates(x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let mut g = Graph::<f64>::new();
        let xv = g.param(t(&[3], &x));
        let y = vector_fn(&mut g, xv);
        let seed = t(&[3], &[1.0, 1.0, 1.0]);
        g.backward(y, &seed).unwrap();
        let once = g.grad(xv).unwrap().to_vec();
        g.backward(y, &seed).unwrap();
        let twice = g.grad(xv).unwrap();
        for i in 0..3 {
            prop_assert!((twice[i] - 2.0 * once[i]).abs() < 1e-12);
        }
    }
}
