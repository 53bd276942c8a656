//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Bound, ParameterStore};
use crate::tensor::Tensor;

pub mod suites;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|a - n| / max(1e-8, |a| + |n|)`.
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradient of the scalar function `f` at `point` against
/// central differences with step `epsilon`. `f` receives a fresh graph and
/// the input variable and must return a single-element output.
pub fn finite_diff_check<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(invalid("finite_diff_check", "epsilon must be positive"));
    }
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p.clone());
        let y = f(&mut g, x)?;
        scalar_of(&g, y)
    };

    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    scalar_of(&g, y)?;
    g.backward_scalar(y)?;
    let analytic: Vec<f64> = match g.grad(x) {
        Some(d) => d.to_vec(),
        None => alloc::vec![0.0; point.len()],
    };

    let mut numeric = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * epsilon));
    }
    compare(analytic, numeric)
}

/// Builds a report from paired gradient vectors, failing on non-finite
/// entries.
pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>) -> Result<GradCheckReport> {
    let mut worst = 0.0;
    let mut worst_index = 0;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "analytic gradient",
            });
        }
        if !n.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "numeric gradient",
            });
        }
        let e = relative_error(a, n);
        if e > worst {
            worst = e;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        analytic,
        numeric,
    })
}

fn scalar_of(g: &Graph<f64>, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.len() != 1 {
        return Err(invalid("finite_diff_check", "function must be scalar-valued"));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            what: "function value",
        });
    }
    Ok(s)
}

/// Like [`finite_diff_check`] for functions of an input and a parameter
/// set. Checks `input_samples` input coordinates and `param_samples`
/// parameter coordinates, drawn at random (all of them if there are fewer).
pub fn param_check<F, R>(
    f: F,
    params: &ParameterStore<f64>,
    input: &Tensor<f64>,
    input_samples: usize,
    param_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
    R: rand::Rng,
{
    let eval = |p: &ParameterStore<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = crate::model::bind_constants(p, &mut g);
        let xv = g.constant(x.clone());
        let y = f(&mut g, &b, xv)?;
        scalar_of(&g, y)
    };

    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let xv = g.param(input.clone());
    let y = f(&mut g, &b, xv)?;
    scalar_of(&g, y)?;
    g.backward_scalar(y)?;
    let grads = b.grads(&g);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let xg = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; input.len()]);
    let mut probe = input.clone();
    for i in pick(rng, input.len(), input_samples) {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let fp = eval(params, &probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let fm = eval(params, &probe)?;
        probe.data_mut()[i] = orig;
        analytic.push(xg[i]);
        numeric.push((fp - fm) / (2.0 * epsilon));
    }

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
        .collect();
    let mut probe = params.clone();
    for (name, i) in pick(rng, coords.len(), param_samples).into_iter().map(|k| &coords[k]) {
        let orig = params.get(name).expect("listed above").data()[*i];
        let set = |p: &mut ParameterStore<f64>, v: f64| p.get_mut(name).expect("listed above").data_mut()[*i] = v;
        set(&mut probe, orig + epsilon);
        let fp = eval(&probe, input)?;
        set(&mut probe, orig - epsilon);
        let fm = eval(&probe, input)?;
        set(&mut probe, orig);
        analytic.push(grads.get(name).map_or(0.0, |g| g[*i]));
        numeric.push((fp - fm) / (2.0 * epsilon));
    }
    compare(analytic, numeric)
}

fn pick<R: rand::Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, n, k).into_vec();
        v.sort_unstable();
        v
    }
}
