//! Named finite-difference suites over the primitives, layers, projection,
//! the recurrent cell and the unrolled model, all in `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff_check, param_check, GradCheckReport};
use crate::cell::{RecurrentState, RspCell};
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Activation, Aspp, Bound, ConvBlock, ConvGru, ParameterStore, RegressionHead};
use crate::model::{Architecture, Model, ModelConfig};
use crate::projection::{normalize_projection, project_state, GridGeometry, Merge};
use crate::tensor::Tensor;

pub const MODULES: &[&str] = &["engine", "layers", "projection", "cell", "model"];
/// Bound on the max relative error of single operations and layers.
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Bound for the unrolled model.
pub const UNROLLED_TOLERANCE: f64 = 1e-3;
/// Frames in the unrolled model check.
pub const UNROLL_STEPS: usize = 12;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
}

impl CheckResult {
    fn new(module: &'static str, name: impl Into<String>, r: &GradCheckReport, tolerance: f64) -> Self {
        Self {
            module,
            name: name.into(),
            max_rel_error: r.max_rel_error,
            tolerance,
            coordinates: r.analytic.len(),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Runs one suite by name.
pub fn run(module: &str, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match module {
        "engine" => engine(&mut rng),
        "layers" => layers(&mut rng),
        "projection" => projection(&mut rng),
        "cell" => cell(&mut rng),
        "model" => model(&mut rng),
        _ => Err(invalid("gradcheck", "unknown module")),
    }
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for m in MODULES {
        out.extend(run(m, seed)?);
    }
    Ok(out)
}

/// Uniform tensor on `[lo, hi)`.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape and length agree")
}

/// Uniform values at least `margin` away from zero.
pub fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], scale: f64, margin: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, margin, scale);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Offsets in meters whose fractional cell part stays inside `[0.1, 0.9]`,
/// so no bilinear footprint changes under a small perturbation.
pub fn smooth_offsets<R: Rng>(rng: &mut R, x: usize, y: usize, cell_size: f64, max_cells: i32) -> Tensor<f64> {
    let data = (0..x * y * 2)
        .map(|_| (rng.gen_range(-max_cells..=max_cells) as f64 + rng.gen_range(0.1..0.9)) * cell_size)
        .collect();
    Tensor::new(&[x, y, 2], data).expect("shape and length agree")
}

/// Fixed, non-trivial linear readout to a scalar.
pub fn readout(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n = g.value(y).len();
    let w = (0..n).map(|i| libm_sin(1.37 * i as f64 + 0.4)).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn libm_sin(x: f64) -> f64 {
    num_traits::Float::sin(x)
}

fn unary<F>(name: &str, x: &Tensor<f64>, f: F, out: &mut Vec<CheckResult>) -> Result<()>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let r = finite_diff_check(
        |g, v| {
            let y = f(g, v)?;
            readout(g, y)
        },
        x,
        EPS,
    )?;
    out.push(CheckResult::new("engine", name, &r, LAYER_TOLERANCE));
    Ok(())
}

/// Checks a binary primitive with respect to each operand in turn.
fn binary<F>(name: &str, a: &Tensor<f64>, b: &Tensor<f64>, f: F, out: &mut Vec<CheckResult>) -> Result<()>
where
    F: Fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
{
    unary(&format!("{name}/lhs"), a, |g, x| {
        let c = g.constant(b.clone());
        f(g, x, c)
    }, out)?;
    unary(&format!("{name}/rhs"), b, |g, x| {
        let c = g.constant(a.clone());
        f(g, c, x)
    }, out)
}

fn engine<R: Rng>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let s = [3, 4, 2];
    let mut out = Vec::new();
    let a = uniform(rng, &s, -2.0, 2.0);
    let b = uniform(rng, &s, -2.0, 2.0);
    let pos = uniform(rng, &s, 0.5, 3.0);
    binary("add", &a, &b, |g, x, y| g.add(x, y), &mut out)?;
    binary("sub", &a, &b, |g, x, y| g.sub(x, y), &mut out)?;
    binary("mul", &a, &b, |g, x, y| g.mul(x, y), &mut out)?;
    binary("div", &a, &pos, |g, x, y| g.div(x, y), &mut out)?;
    unary("add_scalar", &a, |g, x| Ok(g.add_scalar(x, 0.7)), &mut out)?;
    unary("mul_scalar", &a, |g, x| Ok(g.mul_scalar(x, -1.3)), &mut out)?;
    let m1 = uniform(rng, &[3, 4], -1.0, 1.0);
    let m2 = uniform(rng, &[4, 2], -1.0, 1.0);
    binary("matmul", &m1, &m2, |g, x, y| g.matmul(x, y), &mut out)?;
    let img = uniform(rng, &[5, 6, 2], -1.0, 1.0);
    for (k, dil) in [(1, 1), (3, 1), (3, 2)] {
        let w = uniform(rng, &[k, k, 2, 3], -1.0, 1.0);
        binary(&format!("conv2d/k{k}d{dil}"), &img, &w, move |g, x, y| g.conv2d(x, y, dil), &mut out)?;
    }
    let bias = uniform(rng, &[2], -1.0, 1.0);
    binary("add_bias", &a, &bias, |g, x, y| g.add_bias(x, y), &mut out)?;
    let one = uniform(rng, &[3, 4, 1], -1.0, 1.0);
    unary("broadcast_channels", &one, |g, x| g.broadcast_channels(x, 3), &mut out)?;
    unary("sigmoid", &a, |g, x| Ok(g.sigmoid(x)), &mut out)?;
    unary("tanh", &a, |g, x| Ok(g.tanh(x)), &mut out)?;
    unary("exp", &a, |g, x| Ok(g.exp(x)), &mut out)?;
    unary("ln", &pos, |g, x| Ok(g.ln(x)), &mut out)?;
    let nz = away_from_zero(rng, &s, 2.0, 0.05);
    unary("leaky_relu", &nz, |g, x| Ok(g.leaky_relu(x, 0.1)), &mut out)?;
    unary("clamp", &nz, |g, x| Ok(g.clamp(x, -1.0, 1.0)), &mut out)?;
    binary("concat", &a, &b, |g, x, y| g.concat(&[x, y]), &mut out)?;
    unary("slice_channels", &a, |g, x| g.slice_channels(x, 1, 1), &mut out)?;
    unary("sum", &a, |g, x| Ok(g.sum(x)), &mut out)?;
    unary("mean", &a, |g, x| Ok(g.mean(x)), &mut out)?;
    unary("sum_channels", &a, |g, x| Ok(g.sum_channels(x)), &mut out)?;
    unary("log_softmax", &a, |g, x| Ok(g.log_softmax(x)), &mut out)?;
    let payload = uniform(rng, &[4, 5, 2], -1.0, 1.0);
    let off = smooth_offsets(rng, 4, 5, 0.5, 1);
    binary("splat", &payload, &off, |g, x, y| g.splat(x, y, 0.5), &mut out)?;
    let even = uniform(rng, &[4, 6, 2], -1.0, 1.0);
    unary("avg_pool2", &even, |g, x| g.avg_pool2(x), &mut out)?;
    unary("upsample2", &a, |g, x| g.upsample2(x), &mut out)?;
    Ok(out)
}

/// Initialised parameters with every entry (biases included) jittered so
/// that no unit sits on a symmetric or zero configuration.
fn jittered<R: Rng>(mut store: ParameterStore<f64>, rng: &mut R) -> ParameterStore<f64> {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    store
}

fn layer_check<R, F>(name: &str, params: &ParameterStore<f64>, x: &Tensor<f64>, f: F, rng: &mut R) -> Result<CheckResult>
where
    R: Rng,
    F: Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
{
    let r = param_check(
        |g, p, v| {
            let y = f(g, p, v)?;
            readout(g, y)
        },
        params,
        x,
        usize::MAX,
        usize::MAX,
        EPS,
        rng,
    )?;
    Ok(CheckResult::new("layers", name, &r, LAYER_TOLERANCE))
}

fn layers<R: Rng>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let (n, cin) = (8, 2);
    let x = uniform(rng, &[n, n, cin], -1.0, 1.0);

    for (name, block) in [
        ("conv3_leaky", ConvBlock::new("c", cin, 3, 3, Activation::LeakyRelu)),
        ("conv1_linear", ConvBlock::new("c", cin, 3, 1, Activation::Linear)),
        ("conv3_dilated4", ConvBlock::dilated("c", cin, 3, 3, 4, Activation::LeakyRelu)),
    ] {
        let mut store = ParameterStore::new();
        block.init(&mut store, rng)?;
        let store = jittered(store, rng);
        out.push(layer_check(name, &store, &x, |g, p, v| block.forward(g, p, v), rng)?);
    }

    let gru = ConvGru::new("gru", cin, 3);
    let mut store = ParameterStore::new();
    gru.init(&mut store, rng)?;
    let store = jittered(store, rng);
    let xh = uniform(rng, &[n, n, cin + 3], -1.0, 1.0);
    out.push(layer_check(
        "conv_gru",
        &store,
        &xh,
        |g, p, v| {
            let x = g.slice_channels(v, 0, cin)?;
            let h = g.slice_channels(v, cin, 3)?;
            gru.step(g, p, h, x)
        },
        rng,
    )?);

    let aspp = Aspp::new("aspp", cin, 2, 3, &[1, 2, 4, 8]);
    let mut store = ParameterStore::new();
    aspp.init(&mut store, rng)?;
    let store = jittered(store, rng);
    out.push(layer_check("aspp", &store, &x, |g, p, v| aspp.forward(g, p, v), rng)?);

    let head = RegressionHead::new("head", cin, 3, 2);
    let mut store = ParameterStore::new();
    head.init(&mut store, rng)?;
    let store = jittered(store, rng);
    out.push(layer_check("regression_head", &store, &x, |g, p, v| head.forward(g, p, v), rng)?);
    Ok(out)
}

fn projection<R: Rng>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let geom = GridGeometry::new(8, 8, 0.5, 10.0)?;
    let mut out = Vec::new();
    let payload = uniform(rng, &[8, 8, 3], -1.0, 1.0);
    let off = smooth_offsets(rng, 8, 8, geom.cell_size, 2);
    for merge in [Merge::Sum, Merge::Mean] {
        let f = |g: &mut Graph<f64>, p: Var, o: Var| -> Result<Var> {
            let (moved, mass) = project_state(g, p, o, &geom)?;
            let y = normalize_projection(g, moved, mass, merge)?;
            readout(g, y)
        };
        let name = format!("{merge:?}").to_lowercase();
        let r = finite_diff_check(
            |g, x| {
                let o = g.constant(off.clone());
                f(g, x, o)
            },
            &payload,
            EPS,
        )?;
        out.push(CheckResult::new("projection", format!("{name}/payload"), &r, LAYER_TOLERANCE));
        let r = finite_diff_check(
            |g, x| {
                let p = g.constant(payload.clone());
                f(g, p, x)
            },
            &off,
            EPS,
        )?;
        out.push(CheckResult::new("projection", format!("{name}/offset"), &r, LAYER_TOLERANCE));
    }
    Ok(out)
}

fn cell<R: Rng>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let geom = GridGeometry::new(8, 8, 0.5, 10.0)?;
    let (f, m, d) = (2, 3, 2);
    let rsp = RspCell::new("cell", geom, f, m, d, 3);
    let mut store = ParameterStore::new();
    rsp.init(&mut store, rng)?;
    let store = jittered(store, rng);
    let mut packed = uniform(rng, &[8, 8, f + m + 2], -1.0, 1.0);
    let off = smooth_offsets(rng, 8, 8, geom.cell_size, 1);
    for c in 0..64 {
        for k in 0..2 {
            packed.data_mut()[c * (f + m + 2) + f + m + k] = off.data()[c * 2 + k];
        }
    }
    let r = param_check(
        |g, p, v| {
            let x = g.slice_channels(v, 0, f)?;
            let h = g.slice_channels(v, f, m)?;
            let off = g.slice_channels(v, f + m, 2)?;
            let o = rsp.step(g, p, crate::cell::CellState { h, off }, x)?;
            let att = o.attention.expect("cell reports attention");
            let all = g.concat(&[o.features, o.v_refined, o.v_initial, att])?;
            readout(g, all)
        },
        &store,
        &packed,
        usize::MAX,
        200,
        EPS,
        rng,
    )?;
    Ok(alloc::vec![CheckResult::new("cell", "rsp_step", &r, LAYER_TOLERANCE)])
}

/// A deliberately small RSP network on an 8x8 grid.
pub fn small_model_config(arch: Architecture) -> Result<ModelConfig> {
    let mut c = ModelConfig::new(arch, GridGeometry::new(8, 8, 0.5, 10.0)?);
    c.f = 3;
    c.m = 3;
    c.d_h = 2;
    c.head_width = 3;
    c.aspp_branch = 2;
    c.aspp_width = 3;
    c.aspp_blocks = 2;
    c.pyramid_m = 2;
    Ok(c)
}

fn model<R: Rng>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let model = Model::build(&small_model_config(Architecture::Rsp)?)?;
    let store = jittered(model.init_params::<f64>(rng.gen())?, rng);
    let frames = uniform(rng, &[8, 8, UNROLL_STEPS], 0.0, 1.0);
    let r = param_check(
        |g, p, v| {
            let inputs = (0..UNROLL_STEPS)
                .map(|t| g.slice_channels(v, t, 1))
                .collect::<Result<Vec<_>>>()?;
            let state = model.zero_state::<f64>().iter().map(|s: &RecurrentState<f64>| s.bind(g)).collect();
            let (outs, _) = model.unroll(g, p, state, &inputs)?;
            let mut total = None;
            for o in outs {
                let y = g.concat(&[o.class_logits, o.v_refined])?;
                let r = readout(g, y)?;
                total = Some(match total {
                    None => r,
                    Some(t) => g.add(t, r)?,
                });
            }
            Ok(total.expect("at least one frame"))
        },
        &store,
        &frames,
        48,
        96,
        EPS,
        rng,
    )?;
    Ok(alloc::vec![CheckResult::new("model", "rsp_unrolled_12", &r, UNROLLED_TOLERANCE)])
}
