//! Independent scalar reference implementations used as test oracles.
#![allow(dead_code)]

/// Row-major `[X, Y, C]` field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub x: usize,
    pub y: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Field {
    pub fn new(x: usize, y: usize, c: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), x * y * c);
        Self { x, y, c, v }
    }

    pub fn zeros(x: usize, y: usize, c: usize) -> Self {
        Self::new(x, y, c, vec![0.0; x * y * c])
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.v[(i * self.y + j) * self.c + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, val: f64) {
        self.v[(i * self.y + j) * self.c + k] = val;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.x, self.y, self.c, self.v.iter().map(|&a| f(a)).collect())
    }

    pub fn zip(&self, o: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.x, self.y, self.c), (o.x, o.y, o.c));
        Self::new(self.x, self.y, self.c, self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn concat(parts: &[&Field]) -> Self {
        let (x, y) = (parts[0].x, parts[0].y);
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut out = Self::zeros(x, y, c);
        for i in 0..x {
            for j in 0..y {
                let mut k0 = 0;
                for p in parts {
                    for k in 0..p.c {
                        out.set(i, j, k0 + k, p.at(i, j, k));
                    }
                    k0 += p.c;
                }
            }
        }
        out
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(self.x, self.y, len);
        for i in 0..self.x {
            for j in 0..self.y {
                for k in 0..len {
                    out.set(i, j, k, self.at(i, j, start + k));
                }
            }
        }
        out
    }
}

/// Zero-padded "same" convolution, weight `[K, K, Cin, Cout]`.
pub fn conv(x: &Field, w: &[f64], bias: &[f64], k: usize, cout: usize, dilation: usize) -> Field {
    let r = (k / 2) as i64 * dilation as i64;
    let mut out = Field::zeros(x.x, x.y, cout);
    for i in 0..x.x {
        for j in 0..x.y {
            for o in 0..cout {
                let mut acc = bias[o];
                for di in 0..k {
                    for dj in 0..k {
                        let si = i as i64 + di as i64 * dilation as i64 - r;
                        let sj = j as i64 + dj as i64 * dilation as i64 - r;
                        if si < 0 || sj < 0 || si >= x.x as i64 || sj >= x.y as i64 {
                            continue;
                        }
                        for c in 0..x.c {
                            acc += x.at(si as usize, sj as usize, c) * w[((di * k + dj) * x.c + c) * cout + o];
                        }
                    }
                }
                out.set(i, j, o, acc);
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.1 * v
    }
}

/// Forward bilinear splat; returns the moved payload and the mass.
pub fn splat(payload: &Field, off: &Field, cell: f64) -> (Field, Field) {
    let mut out = Field::zeros(payload.x, payload.y, payload.c);
    let mut mass = Field::zeros(payload.x, payload.y, 1);
    for i in 0..payload.x {
        for j in 0..payload.y {
            let ti = i as f64 + off.at(i, j, 0) / cell;
            let tj = j as f64 + off.at(i, j, 1) / cell;
            let (fi, fj) = (ti.floor(), tj.floor());
            let (ai, aj) = (ti - fi, tj - fj);
            for (di, wi) in [(0.0, 1.0 - ai), (1.0, ai)] {
                for (dj, wj) in [(0.0, 1.0 - aj), (1.0, aj)] {
                    let (ci, cj) = (fi + di, fj + dj);
                    let w = wi * wj;
                    if w == 0.0 || ci < 0.0 || cj < 0.0 || ci >= payload.x as f64 || cj >= payload.y as f64 {
                        continue;
                    }
                    let (ci, cj) = (ci as usize, cj as usize);
                    for k in 0..payload.c {
                        let v = out.at(ci, cj, k) + w * payload.at(i, j, k);
                        out.set(ci, cj, k, v);
                    }
                    mass.set(ci, cj, 0, mass.at(ci, cj, 0) + w);
                }
            }
        }
    }
    (out, mass)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsp_core::layers::ParameterStore;
use rsp_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(x: usize, y: usize, c: usize, scale: f64, r: &mut ChaCha8Rng) -> Field {
    Field::new(x, y, c, (0..x * y * c).map(|_| r.gen_range(-scale..scale)).collect())
}

pub fn tensor(f: &Field) -> Tensor<f64> {
    Tensor::new(&[f.x, f.y, f.c], f.v.clone()).unwrap()
}

pub fn field(t: &Tensor<f64>) -> Field {
    let s = t.shape();
    Field::new(s[0], s[1], s[2], t.data().to_vec())
}

/// Perturbs every parameter so that zero-initialised biases are exercised.
pub fn jitter(store: &mut ParameterStore<f64>, scale: f64, r: &mut ChaCha8Rng) {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-scale..scale);
        }
    }
}

pub fn param(store: &ParameterStore<f64>, name: &str) -> Vec<f64> {
    store.get(name).unwrap_or_else(|| panic!("missing {name}")).data().to_vec()
}

/// Reference conv block: `act(conv(x) + b)` using the named parameters.
pub fn conv_block(
    store: &ParameterStore<f64>,
    name: &str,
    x: &Field,
    k: usize,
    cout: usize,
    dilation: usize,
    act: fn(f64) -> f64,
) -> Field {
    let w = param(store, &format!("{name}.weight"));
    let b = param(store, &format!("{name}.bias"));
    conv(x, &w, &b, k, cout, dilation).map(act)
}

pub fn identity(v: f64) -> f64 {
    v
}

pub fn head(store: &ParameterStore<f64>, name: &str, x: &Field, hidden: usize, out: usize) -> Field {
    let y = conv_block(store, &format!("{name}.conv0"), x, 3, hidden, 1, leaky);
    let y = conv_block(store, &format!("{name}.conv1"), &y, 3, hidden, 1, leaky);
    conv_block(store, &format!("{name}.out"), &y, 1, out, 1, identity)
}

pub fn gru(store: &ParameterStore<f64>, name: &str, h: &Field, x: &Field) -> Field {
    let m = h.c;
    let xh = Field::concat(&[x, h]);
    let z = conv_block(store, &format!("{name}.z"), &xh, 3, m, 1, sigmoid);
    let r = conv_block(store, &format!("{name}.r"), &xh, 3, m, 1, sigmoid);
    let rh = r.zip(h, |a, b| a * b);
    let xrh = Field::concat(&[x, &rh]);
    let c = conv_block(store, &format!("{name}.h"), &xrh, 3, m, 1, f64::tanh);
    let keep = z.zip(h, |z, h| (1.0 - z) * h);
    keep.zip(&z.zip(&c, |z, c| z * c), |a, b| a + b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
