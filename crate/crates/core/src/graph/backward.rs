use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, Grid3};
use super::{Graph, Node, Op, Var};
use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Gradient buffer of `v`, created on first use. `None` for nodes that do
/// not require gradients.
fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut [T]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn grid3(shape: &[usize]) -> Grid3 {
    Grid3 {
        x: shape[0],
        y: shape[1],
        c: shape[2],
    }
}

impl<T: Real> Graph<T> {
    /// Propagates `seed` (shaped like `output`) back through the record and
    /// accumulates into every leaf that requires gradients.
    pub fn backward(&mut self, output: Var, seed: &Tensor<T>) -> Result<()> {
        if seed.shape() != self.shape(output) {
            return Err(shape_err("backward", self.shape(output), seed.shape()));
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        {
            let Self { nodes, grads } = self;
            let dst = slot(grads, nodes, output).expect("requires grad");
            for (d, &s) in dst.iter_mut().zip(seed.data()) {
                *d += s;
            }
        }
        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
        }
        Ok(())
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&mut self, output: Var) -> Result<()> {
        let seed = Tensor::full(self.shape(output), T::one());
        self.backward(output, &seed)
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let Self { nodes, grads } = self;
        let node = &nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = slot(grads, nodes, v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = slot(grads, nodes, *a) {
                    add_into(d, g);
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(d) = slot(grads, nodes, *a) {
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    for ((d, &gv), &x) in d.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = nodes[b.0].value.data();
                if let Some(d) = slot(grads, nodes, *a) {
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += gv / y;
                    }
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    // d(a/b)/db = -(a/b)/b
                    for (((d, &gv), &q), &y) in d.iter_mut().zip(g).zip(out).zip(vb) {
                        *d -= gv * q / y;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(d) = slot(grads, nodes, *a) {
                    add_into(d, g);
                }
            }
            Op::MulScalar(a, s) => {
                if let Some(d) = slot(grads, nodes, *a) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * *s;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(d) = slot(grads, nodes, *a) {
                    T::gemm(m, n, k, g, false, vb, true, T::one(), d);
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    T::gemm(k, m, n, va, true, g, false, T::one(), d);
                }
            }
            Op::Conv2d {
                input,
                weight,
                dilation,
            } => {
                let gi = grid3(nodes[input.0].value.shape());
                let sw = nodes[weight.0].value.shape();
                let (k, cout) = (sw[0], sw[3]);
                let cells = gi.x * gi.y;
                let kk = k * k * gi.c;
                let x = nodes[input.0].value.data();
                let w = nodes[weight.0].value.data();
                let want_w = nodes[weight.0].requires_grad;
                let want_x = nodes[input.0].requires_grad;
                if k == 1 {
                    if let Some(d) = slot(grads, nodes, *weight) {
                        T::gemm(kk, cells, cout, x, true, g, false, T::one(), d);
                    }
                    if let Some(d) = slot(grads, nodes, *input) {
                        T::gemm(cells, cout, kk, g, false, w, true, T::one(), d);
                    }
                } else {
                    if want_w {
                        let mut cols = vec![T::zero(); cells * kk];
                        kernels::im2col(x, gi, k, *dilation, &mut cols);
                        let d = slot(grads, nodes, *weight).expect("weight grad");
                        T::gemm(kk, cells, cout, &cols, true, g, false, T::one(), d);
                    }
                    if want_x {
                        let mut cols = vec![T::zero(); cells * kk];
                        T::gemm(cells, cout, kk, g, false, w, true, T::zero(), &mut cols);
                        let d = slot(grads, nodes, *input).expect("input grad");
                        kernels::col2im_add(&cols, gi, k, *dilation, d);
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    add_into(d, g);
                }
                let c = nodes[b.0].value.len();
                if let Some(d) = slot(grads, nodes, *b) {
                    for row in g.chunks(c) {
                        add_into(d, row);
                    }
                }
            }
            Op::Broadcast(x) => {
                let c = node.value.channels();
                if let Some(d) = slot(grads, nodes, *x) {
                    for (d, row) in d.iter_mut().zip(g.chunks(c)) {
                        *d += row.iter().fold(T::zero(), |a, &b| a + b);
                    }
                }
            }
            Op::Sigmoid(x) => unary(grads, nodes, *x, g, |gv, _, y| gv * y * (T::one() - y), out),
            Op::Tanh(x) => unary(grads, nodes, *x, g, |gv, _, y| gv * (T::one() - y * y), out),
            Op::Exp(x) => unary(grads, nodes, *x, g, |gv, _, y| gv * y, out),
            Op::Ln(x) => unary(grads, nodes, *x, g, |gv, xv, _| gv / xv, out),
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                unary(grads, nodes, *x, g, |gv, xv, _| if xv > T::zero() { gv } else { gv * s }, out)
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(
                    grads,
                    nodes,
                    *x,
                    g,
                    |gv, xv, _| if xv >= lo && xv <= hi { gv } else { T::zero() },
                    out,
                )
            }
            Op::Concat(parts) => {
                let total = node.value.channels();
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p.0].value.channels();
                    if let Some(d) = slot(grads, nodes, p) {
                        for (drow, grow) in d.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(drow, &grow[off..off + c]);
                        }
                    }
                    off += c;
                }
            }
            Op::Slice(x, start) => {
                let len = node.value.channels();
                let c = nodes[x.0].value.channels();
                if let Some(d) = slot(grads, nodes, *x) {
                    for (drow, grow) in d.chunks_mut(c).zip(g.chunks(len)) {
                        add_into(&mut drow[*start..*start + len], grow);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                let n = T::of(nodes[x.0].value.len() as f64);
                if let Some(d) = slot(grads, nodes, *x) {
                    let s = g[0] / n;
                    for d in d.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::SumChannels(x) => {
                let c = nodes[x.0].value.channels();
                if let Some(d) = slot(grads, nodes, *x) {
                    for (drow, &gv) in d.chunks_mut(c).zip(g) {
                        for d in drow {
                            *d += gv;
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = node.value.channels();
                if let Some(d) = slot(grads, nodes, *x) {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let gs = grow.iter().fold(T::zero(), |a, &b| a + b);
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gv - y.exp() * gs;
                        }
                    }
                }
            }
            Op::Splat {
                payload,
                offset,
                inv_res,
            } => {
                let gp = grid3(nodes[payload.0].value.shape());
                let p = nodes[payload.0].value.data();
                let o = nodes[offset.0].value.data();
                let want_p = nodes[payload.0].requires_grad;
                let want_o = nodes[offset.0].requires_grad;
                let mut dp = if want_p { Some(vec![T::zero(); p.len()]) } else { None };
                let mut dof = if want_o { Some(vec![T::zero(); o.len()]) } else { None };
                kernels::splat_backward(p, o, *inv_res, gp, g, dp.as_deref_mut(), dof.as_deref_mut());
                if let (Some(src), Some(d)) = (dp, slot(grads, nodes, *payload)) {
                    add_into(d, &src);
                }
                if let (Some(src), Some(d)) = (dof, slot(grads, nodes, *offset)) {
                    add_into(d, &src);
                }
            }
            Op::AvgPool2(x) => {
                let gx = grid3(nodes[x.0].value.shape());
                let oy = gx.y / 2;
                let quarter = T::of(0.25);
                if let Some(d) = slot(grads, nodes, *x) {
                    for i in 0..gx.x {
                        for j in 0..gx.y {
                            let s = (i * gx.y + j) * gx.c;
                            let t = ((i / 2) * oy + j / 2) * gx.c;
                            for c in 0..gx.c {
                                d[s + c] += quarter * g[t + c];
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let gx = grid3(nodes[x.0].value.shape());
                let oy = gx.y * 2;
                if let Some(d) = slot(grads, nodes, *x) {
                    for i in 0..gx.x * 2 {
                        for j in 0..oy {
                            let s = ((i / 2) * gx.y + j / 2) * gx.c;
                            let t = (i * oy + j) * gx.c;
                            add_into(&mut d[s..s + gx.c], &g[t..t + gx.c]);
                        }
                    }
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Elementwise rule `d += f(g, x, y)` with `x` the input and `y` the output.
fn unary<T: Real>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
    f: impl Fn(T, T, T) -> T,
    out: &[T],
) {
    let xv = nodes[x.0].value.data();
    if let Some(d) = slot(grads, nodes, x) {
        for (((d, &gv), &xi), &yi) in d.iter_mut().zip(g).zip(xv).zip(out) {
            *d += f(gv, xi, yi);
        }
    }
}
