//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends one node to a [`Graph`]; nodes only reference
//! earlier nodes, so the node list is already in topological order.
//! [`Graph::backward`] replays the backward rules in reverse.
//!
//! Gradients accumulate: calling `backward` twice sums into the leaf
//! gradients deterministically. [`Graph::zero_grad`] clears them. Gradients
//! of intermediate nodes are released once they have been propagated.

mod backward;
pub(crate) mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use kernels::Grid3;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the recorded primitives, for reporting.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "add_scalar",
    "mul_scalar",
    "matmul",
    "conv2d",
    "add_bias",
    "broadcast_channels",
    "sigmoid",
    "tanh",
    "exp",
    "ln",
    "leaky_relu",
    "clamp",
    "concat",
    "slice_channels",
    "sum",
    "mean",
    "sum_channels",
    "log_softmax",
    "splat",
    "avg_pool2",
    "upsample2",
];

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Matmul(Var, Var),
    Conv2d { input: Var, weight: Var, dilation: usize },
    AddBias(Var, Var),
    Broadcast(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    LeakyRelu(Var, T),
    Clamp(Var, T, T),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    SumChannels(Var),
    LogSoftmax(Var),
    Splat { payload: Var, offset: Var, inv_res: T },
    AvgPool2(Var),
    Upsample2(Var),
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// The computation record.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
}

fn grid(shape: &[usize]) -> Option<Grid3> {
    match *shape {
        [x, y, c] => Some(Grid3 { x, y, c }),
        _ => None,
    }
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf (or of the seeded output).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v), g.to_vec()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.derived(out, rec, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = map(self.value(a), |v| v + s);
        self.derived(out, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let out = map(self.value(a), |v| v * s);
        self.derived(out, Op::MulScalar(a, s), &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.mul_scalar(a, -T::one());
        self.add_scalar(n, T::one())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.derived(out, Op::Matmul(a, b), &[a, b]))
    }

    /// Stride-1 convolution with zero "same" padding. `input` is
    /// `[X, Y, Cin]`, `weight` is `[K, K, Cin, Cout]` with `K` odd.
    pub fn conv2d(&mut self, input: Var, weight: Var, dilation: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input), self.shape(weight));
        let (g, k, cout) = match (grid(si), sw) {
            (Some(g), &[k, k2, cin, cout]) if k == k2 && cin == g.c && k % 2 == 1 => (g, k, cout),
            _ => return Err(shape_err("conv2d", si, sw)),
        };
        if dilation == 0 {
            return Err(invalid("conv2d", "dilation must be positive"));
        }
        let cells = g.x * g.y;
        let kk = k * k * g.c;
        let mut out = vec![T::zero(); cells * cout];
        let w = self.value(weight).data();
        if k == 1 {
            T::gemm(cells, kk, cout, self.value(input).data(), false, w, false, T::zero(), &mut out);
        } else {
            let mut cols = vec![T::zero(); cells * kk];
            kernels::im2col(self.value(input).data(), g, k, dilation, &mut cols);
            T::gemm(cells, kk, cout, &cols, false, w, false, T::zero(), &mut out);
        }
        let out = Tensor::new(&[g.x, g.y, cout], out)?;
        Ok(self.derived(
            out,
            Op::Conv2d {
                input,
                weight,
                dilation,
            },
            &[input, weight],
        ))
    }

    /// Adds a per-channel bias `[C]` to a tensor whose last axis is `C`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let c = *sx.last().unwrap_or(&0);
        if sb != [c] {
            return Err(shape_err("add_bias", sx, sb));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let out = Tensor::new(sx, data)?;
        Ok(self.derived(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Repeats a single-channel tensor `[.., 1]` along the last axis.
    pub fn broadcast_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.last() != Some(&1) || channels == 0 {
            return Err(shape_err("broadcast_channels", sx, &[channels]));
        }
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = channels;
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| core::iter::repeat(v).take(channels))
            .collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.derived(out, Op::Broadcast(x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = map(self.value(x), sigmoid);
        self.derived(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.tanh());
        self.derived(out, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.exp());
        self.derived(out, Op::Exp(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.ln());
        self.derived(out, Op::Ln(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = map(self.value(x), |v| if v > T::zero() { v } else { slope * v });
        self.derived(out, Op::LeakyRelu(x, slope), &[x])
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient passes where the
    /// input lies inside the closed interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = map(self.value(x), |v| v.max(lo).min(hi));
        self.derived(out, Op::Clamp(x, lo, hi), &[x])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat", "no operands"))?;
        let lead = self.shape(first);
        let lead = &lead[..lead.len() - 1];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(shape_err("concat", self.shape(first), s));
            }
            total += s[s.len() - 1];
        }
        let cells: usize = lead.iter().product();
        let mut data = Vec::with_capacity(cells * total);
        for cell in 0..cells {
            for &p in parts {
                let c = self.value(p).channels();
                data.extend_from_slice(&self.value(p).data()[cell * c..(cell + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(&shape, data)?;
        Ok(self.derived(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        let c = *sx.last().unwrap_or(&0);
        if len == 0 || start + len > c {
            return Err(shape_err("slice_channels", sx, &[start, len]));
        }
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = len;
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.derived(out, Op::Slice(x, start), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::of(v.len() as f64);
        self.derived(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.channels();
        let data = v.data().chunks(c).map(|r| r.iter().fold(T::zero(), |a, &b| a + b)).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let out = Tensor::new(&shape, data).expect("reduced shape");
        self.derived(out, Op::SumChannels(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.channels();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().fold(T::zero(), |a, &b| a + (b - m).exp()).ln();
            for r in row.iter_mut() {
                *r -= lse;
            }
        }
        let out = Tensor::new(v.shape(), data).expect("same shape");
        self.derived(out, Op::LogSoftmax(x), &[x])
    }

    /// Forward bilinear splat of `payload [X, Y, C]` by metric displacements
    /// `offset [X, Y, 2]` on cells of size `cell_size`. The result has
    /// `C + 1` channels; the last one is the received splat mass.
    pub fn splat(&mut self, payload: Var, offset: Var, cell_size: T) -> Result<Var> {
        let (sp, so) = (self.shape(payload), self.shape(offset));
        let g = match (grid(sp), grid(so)) {
            (Some(g), Some(o)) if o.x == g.x && o.y == g.y && o.c == 2 => g,
            _ => return Err(shape_err("splat", sp, so)),
        };
        if !(cell_size > T::zero()) {
            return Err(invalid("splat", "cell size must be positive"));
        }
        let inv_res = T::one() / cell_size;
        let mut out = vec![T::zero(); g.x * g.y * (g.c + 1)];
        kernels::splat_forward(self.value(payload).data(), self.value(offset).data(), inv_res, g, &mut out);
        let out = Tensor::new(&[g.x, g.y, g.c + 1], out)?;
        Ok(self.derived(
            out,
            Op::Splat {
                payload,
                offset,
                inv_res,
            },
            &[payload, offset],
        ))
    }

    /// 2x2 mean pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let g = match grid(sx) {
            Some(g) if g.x % 2 == 0 && g.y % 2 == 0 => g,
            _ => return Err(shape_err("avg_pool2", sx, &[2, 2])),
        };
        let (ox, oy) = (g.x / 2, g.y / 2);
        let src = self.value(x).data();
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); ox * oy * g.c];
        for i in 0..g.x {
            for j in 0..g.y {
                let s = (i * g.y + j) * g.c;
                let t = ((i / 2) * oy + j / 2) * g.c;
                for c in 0..g.c {
                    out[t + c] += quarter * src[s + c];
                }
            }
        }
        let out = Tensor::new(&[ox, oy, g.c], out)?;
        Ok(self.derived(out, Op::AvgPool2(x), &[x]))
    }

    /// Nearest-neighbour upsampling by 2.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let g = grid(sx).ok_or_else(|| shape_err("upsample2", sx, &[2, 2]))?;
        let (ox, oy) = (g.x * 2, g.y * 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(ox * oy * g.c);
        for i in 0..ox {
            for j in 0..oy {
                let s = ((i / 2) * g.y + j / 2) * g.c;
                out.extend_from_slice(&src[s..s + g.c]);
            }
        }
        let out = Tensor::new(&[ox, oy, g.c], out)?;
        Ok(self.derived(out, Op::Upsample2(x), &[x]))
    }
}
