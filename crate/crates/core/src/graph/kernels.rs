//! Raw loops shared by the forward and backward passes.

use crate::real::Real;

/// Spatial geometry of an `[X, Y, C]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Grid3 {
    pub x: usize,
    pub y: usize,
    pub c: usize,
}

/// Patch extraction for a `k x k` kernel with dilation `d` and zero "same"
/// padding. Row `i * Y + j` of `cols` holds the receptive field of output
/// cell `(i, j)` ordered as `(ki, kj, c)`.
pub(crate) fn im2col<T: Real>(input: &[T], g: Grid3, k: usize, d: usize, cols: &mut [T]) {
    let r = (k / 2) as isize;
    let row = k * k * g.c;
    debug_assert_eq!(cols.len(), g.x * g.y * row);
    for i in 0..g.x {
        for j in 0..g.y {
            let base = (i * g.y + j) * row;
            for ki in 0..k {
                let si = i as isize + (ki as isize - r) * d as isize;
                for kj in 0..k {
                    let sj = j as isize + (kj as isize - r) * d as isize;
                    let dst = &mut cols[base + (ki * k + kj) * g.c..base + (ki * k + kj + 1) * g.c];
                    if si < 0 || sj < 0 || si >= g.x as isize || sj >= g.y as isize {
                        dst.fill(T::zero());
                    } else {
                        let s = (si as usize * g.y + sj as usize) * g.c;
                        dst.copy_from_slice(&input[s..s + g.c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: Grid3, k: usize, d: usize, input_grad: &mut [T]) {
    let r = (k / 2) as isize;
    let row = k * k * g.c;
    for i in 0..g.x {
        for j in 0..g.y {
            let base = (i * g.y + j) * row;
            for ki in 0..k {
                let si = i as isize + (ki as isize - r) * d as isize;
                if si < 0 || si >= g.x as isize {
                    continue;
                }
                for kj in 0..k {
                    let sj = j as isize + (kj as isize - r) * d as isize;
                    if sj < 0 || sj >= g.y as isize {
                        continue;
                    }
                    let s = (si as usize * g.y + sj as usize) * g.c;
                    let src = &cols[base + (ki * k + kj) * g.c..base + (ki * k + kj + 1) * g.c];
                    for (dst, &v) in input_grad[s..s + g.c].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
            }
        }
    }
}

/// Bilinear footprint of one displaced source cell: up to four targets with
/// their weights and the weight derivatives along x and y.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint<T> {
    pub target: [Option<usize>; 4],
    pub weight: [T; 4],
    pub dw_dx: [T; 4],
    pub dw_dy: [T; 4],
}

/// Targets are floor-based; a displacement landing exactly on a cell centre
/// puts all weight on that cell and uses the right-hand derivative.
#[inline]
pub(crate) fn footprint<T: Real>(i: usize, j: usize, tx: T, ty: T, g: Grid3) -> Footprint<T> {
    let fx0 = tx.floor();
    let fy0 = ty.floor();
    let ax = tx - fx0;
    let ay = ty - fy0;
    let one = T::one();
    let ix0 = fx0.as_f64() as i64 + i as i64;
    let iy0 = fy0.as_f64() as i64 + j as i64;
    let wx = [one - ax, ax];
    let wy = [one - ay, ay];
    let dwx = [-one, one];
    let mut fp = Footprint {
        target: [None; 4],
        weight: [T::zero(); 4],
        dw_dx: [T::zero(); 4],
        dw_dy: [T::zero(); 4],
    };
    for a in 0..2 {
        for b in 0..2 {
            let n = a * 2 + b;
            let ti = ix0 + a as i64;
            let tj = iy0 + b as i64;
            if ti >= 0 && tj >= 0 && ti < g.x as i64 && tj < g.y as i64 {
                fp.target[n] = Some(ti as usize * g.y + tj as usize);
            }
            fp.weight[n] = wx[a] * wy[b];
            fp.dw_dx[n] = dwx[a] * wy[b];
            fp.dw_dy[n] = wx[a] * dwx[b];
        }
    }
    fp
}

/// Forward splat. `out` has `C + 1` channels: the summed payload followed by
/// the received mass. Sources are visited in row-major order.
pub(crate) fn splat_forward<T: Real>(payload: &[T], offset: &[T], inv_res: T, g: Grid3, out: &mut [T]) {
    let co = g.c + 1;
    for i in 0..g.x {
        for j in 0..g.y {
            let s = i * g.y + j;
            let fp = footprint(i, j, offset[2 * s] * inv_res, offset[2 * s + 1] * inv_res, g);
            let src = &payload[s * g.c..(s + 1) * g.c];
            for n in 0..4 {
                let (Some(t), w) = (fp.target[n], fp.weight[n]) else {
                    continue;
                };
                if w == T::zero() {
                    continue;
                }
                let dst = &mut out[t * co..(t + 1) * co];
                for (d, &p) in dst[..g.c].iter_mut().zip(src) {
                    *d += w * p;
                }
                dst[g.c] += w;
            }
        }
    }
}

/// Backward splat: accumulates into the payload and offset gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn splat_backward<T: Real>(
    payload: &[T],
    offset: &[T],
    inv_res: T,
    g: Grid3,
    grad_out: &[T],
    mut grad_payload: Option<&mut [T]>,
    mut grad_offset: Option<&mut [T]>,
) {
    let co = g.c + 1;
    for i in 0..g.x {
        for j in 0..g.y {
            let s = i * g.y + j;
            let fp = footprint(i, j, offset[2 * s] * inv_res, offset[2 * s + 1] * inv_res, g);
            let src = &payload[s * g.c..(s + 1) * g.c];
            let mut dx = T::zero();
            let mut dy = T::zero();
            for n in 0..4 {
                let Some(t) = fp.target[n] else { continue };
                let go = &grad_out[t * co..(t + 1) * co];
                if let Some(gp) = grad_payload.as_deref_mut() {
                    let w = fp.weight[n];
                    for (d, &v) in gp[s * g.c..(s + 1) * g.c].iter_mut().zip(&go[..g.c]) {
                        *d += w * v;
                    }
                }
                if grad_offset.is_some() {
                    let mut inner = go[g.c];
                    for (&p, &v) in src.iter().zip(&go[..g.c]) {
                        inner += p * v;
                    }
                    dx += fp.dw_dx[n] * inner;
                    dy += fp.dw_dy[n] * inner;
                }
            }
            if let Some(go) = grad_offset.as_deref_mut() {
                go[2 * s] += dx * inv_res;
                go[2 * s + 1] += dy * inv_res;
            }
        }
    }
}
