//! Central differences `L(θ+h) - L(θ-h)` for a single perturbed weight,
//! evaluated in difference arithmetic: every intermediate carries its value
//! at both points together with their difference, and the difference is
//! propagated through exact identities (`tanh a - tanh b =
//! tanh(a-b) (1 - tanh a tanh b)`, `uv - u'v' = Δu·v̄ + ū·Δv`, ...). This
//! avoids subtracting two nearly equal losses.

use ndarray::{Array1, Array2};

use super::network::{self, Loss, Params, MSLE_FLOOR};

/// One weight moved to `plus` and `minus` around `orig`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shift {
    pub tensor: usize,
    pub index: usize,
    pub orig: f64,
    pub plus: f64,
    pub minus: f64,
}

#[derive(Debug, Clone, Copy)]
struct S {
    p: f64,
    m: f64,
    d: f64,
}

impl S {
    fn mid(self) -> f64 {
        0.5 * (self.p + self.m)
    }

    fn mul(self, o: S) -> S {
        S {
            p: self.p * o.p,
            m: self.m * o.m,
            d: self.d * o.mid() + self.mid() * o.d,
        }
    }

    fn add(self, o: S) -> S {
        S {
            p: self.p + o.p,
            m: self.m + o.m,
            d: self.d + o.d,
        }
    }

    fn untouched(self) -> bool {
        self.d == 0.0 && self.p == self.m
    }

    fn same(v: f64) -> S {
        S { p: v, m: v, d: 0.0 }
    }

    fn tanh(self) -> S {
        let (tp, tm) = (self.p.tanh(), self.m.tanh());
        if self.untouched() {
            return S::same(tp);
        }
        S {
            p: tp,
            m: tm,
            d: self.d.tanh() * (1.0 - tp * tm),
        }
    }

    fn sigmoid(self) -> S {
        let ep = (-self.p).exp();
        let sp = 1.0 / (1.0 + ep);
        if self.untouched() {
            return S::same(sp);
        }
        let em = (-self.m).exp();
        let sm = 1.0 / (1.0 + em);
        // σ(-m) = e^{-m} σ(m)
        S {
            p: sp,
            m: sm,
            d: -sp * (em * sm) * (-self.d).exp_m1(),
        }
    }

    fn relu(self) -> S {
        match (self.p > 0.0, self.m > 0.0) {
            (true, true) => self,
            (false, false) => S { p: 0.0, m: 0.0, d: 0.0 },
            _ => {
                let (p, m) = (self.p.max(0.0), self.m.max(0.0));
                S { p, m, d: p - m }
            }
        }
    }
}

/// Batch of paired values.
struct Pair {
    p: Array2<f64>,
    m: Array2<f64>,
    d: Array2<f64>,
}

impl Pair {
    fn constant(x: &Array2<f64>) -> Pair {
        Pair {
            p: x.clone(),
            m: x.clone(),
            d: Array2::zeros(x.raw_dim()),
        }
    }

    fn get(&self, r: usize, c: usize) -> S {
        S {
            p: self.p[[r, c]],
            m: self.m[[r, c]],
            d: self.d[[r, c]],
        }
    }

    fn set(&mut self, r: usize, c: usize, s: S) {
        self.p[[r, c]] = s.p;
        self.m[[r, c]] = s.m;
        self.d[[r, c]] = s.d;
    }

    fn zeros(rows: usize, cols: usize) -> Pair {
        Pair {
            p: Array2::zeros((rows, cols)),
            m: Array2::zeros((rows, cols)),
            d: Array2::zeros((rows, cols)),
        }
    }
}

/// Unperturbed activations reused across shifts.
pub(crate) struct Base {
    /// `x_t·Wx + b` per step.
    input_terms: Vec<Array2<f64>>,
    /// Full gate pre-activations per step.
    gate_pre: Vec<Array2<f64>>,
    /// Hidden and cell states, index 0 the zero initial state.
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    lstm_out: Array2<f64>,
    /// Input of every head layer and its pre-activation.
    head_inputs: Vec<Array2<f64>>,
    head_pre: Vec<Array2<f64>>,
}

impl Base {
    pub fn new(p: &Params, xs: &[Array2<f64>]) -> Base {
        let input_terms: Vec<Array2<f64>> = xs.iter().map(|x| x.dot(&p.wx) + &p.b).collect();
        let cache = network::lstm_forward(p, xs.to_vec());
        let gate_pre = input_terms.iter().zip(&cache.hs).map(|(u, h)| u + &h.dot(&p.wh)).collect();
        let lstm_out = cache.last_hidden().clone();
        let mut head_inputs = Vec::with_capacity(p.fc.len());
        let mut head_pre = Vec::with_capacity(p.fc.len());
        let mut a = lstm_out.clone();
        for d in &p.fc {
            let z = a.dot(&d.w) + &d.b;
            head_inputs.push(a);
            a = z.mapv(|v| v.max(0.0));
            head_pre.push(z);
        }
        Base {
            input_terms,
            gate_pre,
            hs: cache.hs,
            cs: cache.cs,
            lstm_out,
            head_inputs,
            head_pre,
        }
    }

    pub fn lstm_out(&self) -> &Array2<f64> {
        &self.lstm_out
    }
}

/// `x·W + b` for a constant `x` whose unshifted result is `base`.
fn shifted_const(base: &Array2<f64>, x: &Array2<f64>, cols: usize, wt: usize, bt: usize, s: &Shift) -> Pair {
    let mut z = Pair::constant(base);
    if s.tensor == wt {
        let (r, c) = (s.index / cols, s.index % cols);
        for row in 0..x.nrows() {
            let xv = x[[row, r]];
            z.p[[row, c]] += xv * (s.plus - s.orig);
            z.m[[row, c]] += xv * (s.minus - s.orig);
            z.d[[row, c]] = xv * (s.plus - s.minus);
        }
    } else if s.tensor == bt {
        for row in 0..x.nrows() {
            z.p[[row, s.index]] += s.plus - s.orig;
            z.m[[row, s.index]] += s.minus - s.orig;
            z.d[[row, s.index]] = s.plus - s.minus;
        }
    }
    z
}

/// `x·W + b` where `W` is tensor `wt` and `b` tensor `bt`, either possibly
/// shifted.
fn linear(x: &Pair, w: &Array2<f64>, b: &Array1<f64>, wt: usize, bt: usize, s: &Shift) -> Pair {
    let mid = (&x.p + &x.m) * 0.5;
    let zmid = mid.dot(w) + b;
    let d = x.d.dot(w);
    let half = &d * 0.5;
    let mut z = Pair {
        p: &zmid + &half,
        m: zmid - half,
        d,
    };
    if s.tensor == wt {
        let (r, c) = (s.index / w.ncols(), s.index % w.ncols());
        for row in 0..x.p.nrows() {
            let (xp, xm) = (x.p[[row, r]], x.m[[row, r]]);
            z.p[[row, c]] += xp * (s.plus - s.orig);
            z.m[[row, c]] += xm * (s.minus - s.orig);
            z.d[[row, c]] += 0.5 * (xp + xm) * (s.plus - s.minus);
        }
    } else if s.tensor == bt {
        let c = s.index;
        for row in 0..x.p.nrows() {
            z.p[[row, c]] += s.plus - s.orig;
            z.m[[row, c]] += s.minus - s.orig;
            z.d[[row, c]] += s.plus - s.minus;
        }
    }
    z
}

fn add_into(z: &mut Pair, o: &Pair) {
    z.p += &o.p;
    z.m += &o.m;
    z.d += &o.d;
}

const NO_TENSOR: usize = usize::MAX;

fn cell(z: &Pair, r: usize, j: usize, h: usize, c_prev: S, hs: &mut Pair, cs: &mut Pair) {
    let i = z.get(r, j).sigmoid();
    let f = z.get(r, h + j).sigmoid();
    let g = z.get(r, 2 * h + j).tanh();
    let o = z.get(r, 3 * h + j).sigmoid();
    let c = f.mul(c_prev).add(i.mul(g));
    cs.set(r, j, c);
    hs.set(r, j, o.mul(c.tanh()));
}

/// Gate pre-activations at step `t` when only unit `j` of the previous
/// hidden state differs from the cache: a rank-one update of the cached
/// pre-activations.
fn lone_unit_step(p: &Params, x: &Array2<f64>, base: &Base, t: usize, hs: &Pair, j: usize, s: &Shift) -> Pair {
    let cols = p.wh.ncols();
    let mut z = shifted_const(&base.gate_pre[t], x, cols, 0, 2, s);
    let h_base = &base.hs[t];
    for r in 0..x.nrows() {
        let (dp, dm, dd) = (hs.p[[r, j]] - h_base[[r, j]], hs.m[[r, j]] - h_base[[r, j]], hs.d[[r, j]]);
        for k in 0..cols {
            let w = p.wh[[j, k]];
            z.p[[r, k]] += dp * w;
            z.m[[r, k]] += dm * w;
            z.d[[r, k]] += dd * w;
        }
    }
    if s.tensor == 1 {
        let (rs, c) = (s.index / cols, s.index % cols);
        for r in 0..x.nrows() {
            let (xp, xm) = (hs.p[[r, rs]], hs.m[[r, rs]]);
            z.p[[r, c]] += xp * (s.plus - s.orig);
            z.m[[r, c]] += xm * (s.minus - s.orig);
            z.d[[r, c]] += 0.5 * (xp + xm) * (s.plus - s.minus);
        }
    }
    z
}

fn lstm(p: &Params, xs: &[Array2<f64>], base: &Base, s: &Shift) -> Pair {
    let h = p.hidden_size();
    let batch = xs[0].nrows();
    // The recurrent weights act on the zero initial state at step 0.
    let first = usize::from(s.tensor == 1);
    let mut hs = Pair::constant(&base.hs[first]);
    let mut cs = Pair::constant(&base.cs[first]);
    let zero_b = Array1::zeros(4 * h);
    // Unit whose state alone departs from the cache after the first step.
    let lone = s.index % (4 * h) % h;
    for t in first..xs.len() {
        let z = if t == first {
            let x = if s.tensor == 1 { &base.hs[t] } else { &xs[t] };
            let wt = if s.tensor == 1 { 1 } else { 0 };
            let z = shifted_const(&base.gate_pre[t], x, 4 * h, wt, 2, s);
            hs = Pair::constant(&base.hs[t + 1]);
            cs = Pair::constant(&base.cs[t + 1]);
            for r in 0..batch {
                let c_prev = S::same(base.cs[t][[r, lone]]);
                cell(&z, r, lone, h, c_prev, &mut hs, &mut cs);
            }
            continue;
        } else if t == first + 1 {
            lone_unit_step(p, &xs[t], base, t, &hs, lone, s)
        } else {
            let mut z = shifted_const(&base.input_terms[t], &xs[t], 4 * h, 0, 2, s);
            add_into(&mut z, &linear(&hs, &p.wh, &zero_b, 1, NO_TENSOR, s));
            z
        };
        let mut hn = Pair::zeros(batch, h);
        let mut cn = Pair::zeros(batch, h);
        for r in 0..batch {
            for j in 0..h {
                cell(&z, r, j, h, cs.get(r, j), &mut hn, &mut cn);
            }
        }
        hs = hn;
        cs = cn;
    }
    hs
}

fn relu_inplace(z: &mut Pair) {
    for r in 0..z.p.nrows() {
        for c in 0..z.p.ncols() {
            let v = z.get(r, c).relu();
            z.set(r, c, v);
        }
    }
}

/// Head pass starting at layer `from`; `input` feeds that layer.
fn head(p: &Params, from: usize, input: Option<Pair>, base: &Base, s: &Shift) -> Pair {
    let last = p.fc.len() - 1;
    let mut a = input;
    for l in from..p.fc.len() {
        let d = &p.fc[l];
        let (wt, bt) = (3 + 2 * l, 4 + 2 * l);
        let mut z = match &a {
            Some(x) => linear(x, &d.w, &d.b, wt, bt, s),
            None => shifted_const(&base.head_pre[l], &base.head_inputs[l], d.w.ncols(), wt, bt, s),
        };
        if l == last {
            return z;
        }
        relu_inplace(&mut z);
        a = Some(z);
    }
    unreachable!("head has an output layer")
}

fn loss_delta(loss: Loss, out: &Pair, y: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for r in 0..y.nrows() {
        for c in 0..y.ncols() {
            let o = out.get(r, c);
            let t = y[[r, c]];
            let e = match loss {
                Loss::Mse => S {
                    p: o.p - t,
                    m: o.m - t,
                    d: o.d,
                },
                Loss::Msle => {
                    let ly = (1.0 + t.max(MSLE_FLOOR)).ln();
                    let (a, b) = (o.p.max(MSLE_FLOOR), o.m.max(MSLE_FLOOR));
                    let d = if o.p > MSLE_FLOOR && o.m > MSLE_FLOOR {
                        (o.d / (1.0 + o.m)).ln_1p()
                    } else {
                        (1.0 + a).ln() - (1.0 + b).ln()
                    };
                    S {
                        p: (1.0 + a).ln() - ly,
                        m: (1.0 + b).ln() - ly,
                        d,
                    }
                }
            };
            total += e.d * (e.p + e.m);
        }
    }
    total / y.len() as f64
}

/// `L(θ+) - L(θ-)` for the shifted weight.
pub(crate) fn loss_change(p: &Params, xs: &[Array2<f64>], base: &Base, y: &Array2<f64>, loss: Loss, s: &Shift) -> f64 {
    let out = if s.tensor < 3 {
        head(p, 0, Some(lstm(p, xs, base, s)), base, s)
    } else {
        head(p, (s.tensor - 3) / 2, None, base, s)
    };
    loss_delta(loss, &out, y)
}
