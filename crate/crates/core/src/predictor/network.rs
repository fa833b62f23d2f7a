//! Single-layer unidirectional LSTM followed by a ReLU feed-forward head.
//! Batched forward and backward passes in double precision.
//!
//! Gate columns are ordered `[input, forget, cell, output]`, each `hidden`
//! wide.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Params {
    /// Input-to-gates weights, `input x 4*hidden`.
    pub wx: Array2<f64>,
    /// Hidden-to-gates weights, `hidden x 4*hidden`.
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    /// Hidden fc layers then the linear output layer.
    pub fc: Vec<Dense>,
}

fn uniform(r: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-bound..bound))
}

impl Params {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases except a forget-gate
    /// bias of 1.
    pub fn init(input: usize, hidden: usize, fc_dims: &[usize], r: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = uniform(r, input, 4 * hidden, bound);
        let wh = uniform(r, hidden, 4 * hidden, bound);
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        let mut fc = Vec::with_capacity(fc_dims.len());
        let mut fan_in = hidden;
        for &d in fc_dims {
            let bound = 1.0 / (fan_in as f64).sqrt();
            fc.push(Dense {
                w: uniform(r, fan_in, d, bound),
                b: Array1::zeros(d),
            });
            fan_in = d;
        }
        Params { wx, wh, b, fc }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            fc: self
                .fc
                .iter()
                .map(|d| Dense {
                    w: Array2::zeros(d.w.raw_dim()),
                    b: Array1::zeros(d.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.nrows()
    }


    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.wx.as_slice().expect("standard layout"),
            self.wh.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ];
        for d in &self.fc {
            v.push(d.w.as_slice().expect("standard layout"));
            v.push(d.b.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.wx.as_slice_mut().expect("standard layout"),
            self.wh.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ];
        for d in &mut self.fc {
            v.push(d.w.as_slice_mut().expect("standard layout"));
            v.push(d.b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["lstm.w_input".to_string(), "lstm.w_hidden".into(), "lstm.bias".into()];
        for i in 0..self.fc.len() {
            v.push(format!("fc{i}.weight"));
            v.push(format!("fc{i}.bias"));
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from the recurrent pass.
pub(crate) struct LstmCache {
    /// Per-step inputs, `batch x input`.
    pub xs: Vec<Array2<f64>>,
    /// Per-step activated gates, `batch x 4*hidden`.
    pub gates: Vec<Array2<f64>>,
    /// Cell states, index 0 is the zero initial state.
    pub cs: Vec<Array2<f64>>,
    /// Hidden states, index 0 is the zero initial state.
    pub hs: Vec<Array2<f64>>,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hs.last().expect("initial state present")
    }
}

pub(crate) fn lstm_forward(p: &Params, xs: Vec<Array2<f64>>) -> LstmCache {
    let batch = xs.first().map_or(0, |x| x.nrows());
    let h = p.hidden_size();
    let mut cache = LstmCache {
        gates: Vec::with_capacity(xs.len()),
        cs: vec![Array2::zeros((batch, h))],
        hs: vec![Array2::zeros((batch, h))],
        xs: Vec::new(),
    };
    for x in &xs {
        let mut z = x.dot(&p.wx) + cache.hs.last().unwrap().dot(&p.wh) + &p.b;
        z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
        z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
        let c_prev = cache.cs.last().unwrap();
        let mut c = Array2::zeros((batch, h));
        let mut hn = Array2::zeros((batch, h));
        for r in 0..batch {
            let zr = z.row(r);
            for j in 0..h {
                let (i, f, g, o) = (zr[j], zr[h + j], zr[2 * h + j], zr[3 * h + j]);
                let cv = f * c_prev[[r, j]] + i * g;
                c[[r, j]] = cv;
                hn[[r, j]] = o * cv.tanh();
            }
        }
        cache.gates.push(z);
        cache.cs.push(c);
        cache.hs.push(hn);
    }
    cache.xs = xs;
    cache
}

/// Activations kept from the feed-forward head.
pub(crate) struct HeadCache {
    /// Input of each layer (post-activation, post-dropout).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Array2<f64>>,
    /// Inverted-dropout masks of hidden layers (already scaled).
    pub masks: Vec<Option<Array2<f64>>>,
    pub out: Array2<f64>,
}

pub(crate) fn head_forward(p: &Params, input: &Array2<f64>, masks: Vec<Option<Array2<f64>>>) -> HeadCache {
    let last = p.fc.len() - 1;
    let mut inputs = Vec::with_capacity(p.fc.len());
    let mut pre = Vec::with_capacity(last);
    let mut a = input.clone();
    for (l, d) in p.fc.iter().enumerate() {
        let z = a.dot(&d.w) + &d.b;
        inputs.push(a);
        if l == last {
            return HeadCache {
                inputs,
                pre,
                masks,
                out: z,
            };
        }
        let mut act = z.mapv(|v| v.max(0.0));
        if let Some(m) = &masks[l] {
            act *= m;
        }
        pre.push(z);
        a = act;
    }
    unreachable!("head has an output layer")
}

/// Dropout masks for the hidden fc layers.
pub(crate) fn dropout_masks(p: &Params, batch: usize, rate: f64, r: &mut ChaCha8Rng) -> Vec<Option<Array2<f64>>> {
    let hidden_layers = p.fc.len() - 1;
    if rate <= 0.0 {
        return vec![None; hidden_layers];
    }
    let keep = 1.0 - rate;
    p.fc[..hidden_layers]
        .iter()
        .map(|d| {
            Some(Array2::from_shape_simple_fn((batch, d.b.len()), || {
                if r.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            }))
        })
        .collect()
}

/// Gradients of the head; returns the gradient w.r.t. the head input.
pub(crate) fn head_backward(p: &Params, cache: &HeadCache, dout: &Array2<f64>, grads: &mut Params) -> Array2<f64> {
    let mut d = dout.clone();
    for l in (0..p.fc.len()).rev() {
        if l < p.fc.len() - 1 {
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            ndarray::Zip::from(&mut d).and(&cache.pre[l]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        grads.fc[l].w += &cache.inputs[l].t().dot(&d);
        grads.fc[l].b += &d.sum_axis(Axis(0));
        d = d.dot(&p.fc[l].w.t());
    }
    d
}

/// Backpropagation through time from the gradient on the final hidden state.
pub(crate) fn lstm_backward(p: &Params, cache: &LstmCache, dh_last: Array2<f64>, grads: &mut Params) {
    let h = p.hidden_size();
    let batch = dh_last.nrows();
    let steps = cache.xs.len();
    let mut dh = dh_last;
    let mut dc_next: Array2<f64> = Array2::zeros((batch, h));
    let mut dz = Array2::zeros((batch, 4 * h));
    for t in (1..=steps).rev() {
        let gates = &cache.gates[t - 1];
        let c = &cache.cs[t];
        let c_prev = &cache.cs[t - 1];
        for r in 0..batch {
            for j in 0..h {
                let (i, f, g, o) = (gates[[r, j]], gates[[r, h + j]], gates[[r, 2 * h + j]], gates[[r, 3 * h + j]]);
                let tc = c[[r, j]].tanh();
                let dhv = dh[[r, j]];
                let d_o = dhv * tc;
                let dc = dc_next[[r, j]] + dhv * o * (1.0 - tc * tc);
                dz[[r, j]] = dc * g * i * (1.0 - i);
                dz[[r, h + j]] = dc * c_prev[[r, j]] * f * (1.0 - f);
                dz[[r, 2 * h + j]] = dc * i * (1.0 - g * g);
                dz[[r, 3 * h + j]] = d_o * o * (1.0 - o);
                dc_next[[r, j]] = dc * f;
            }
        }
        grads.wx += &cache.xs[t - 1].t().dot(&dz);
        grads.wh += &cache.hs[t - 1].t().dot(&dz);
        grads.b += &dz.sum_axis(Axis(0));
        dh = dz.dot(&p.wh.t());
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean squared logarithmic error, predictions clamped above -1.
    #[default]
    Msle,
    Mse,
}

pub(crate) const MSLE_FLOOR: f64 = -1.0 + 1e-7;

/// Mean loss over all elements and its gradient w.r.t. the predictions.
pub(crate) fn loss_and_grad(loss: Loss, pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let count = pred.len() as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut total = 0.0;
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &y| match loss {
            Loss::Mse => {
                let d = p - y;
                total += d * d;
                *g = 2.0 * d / count;
            }
            Loss::Msle => {
                let pc = p.max(MSLE_FLOOR);
                let d = (1.0 + pc).ln() - (1.0 + y.max(MSLE_FLOOR)).ln();
                total += d * d;
                *g = if p > MSLE_FLOOR { 2.0 * d / ((1.0 + pc) * count) } else { 0.0 };
            }
        });
    (total / count, grad)
}

pub(crate) fn loss_only(loss: Loss, pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    ndarray::Zip::from(pred).and(target).for_each(|&p, &y| {
        let d = match loss {
            Loss::Mse => p - y,
            Loss::Msle => (1.0 + p.max(MSLE_FLOOR)).ln() - (1.0 + y.max(MSLE_FLOOR)).ln(),
        };
        total += d * d;
    });
    total / pred.len() as f64
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(p: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: p.zeros_like(),
            v: p.zeros_like(),
        }
    }

    pub fn update(&mut self, p: &mut Params, g: &Params) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        for (((pt, gt), mt), vt) in p
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((w, &gr), m), v) in pt.iter_mut().zip(gt).zip(mt.iter_mut()).zip(vt.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
