//! Dense tanh MLP with manual backpropagation and an Adam optimizer.
//!
//! Weights are stored input-major (`w[i * out + o]`) so the forward pass and
//! the weight gradient are axpy loops over contiguous output rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Dense {
    /// Uniform init scaled by `gain * sqrt(6 / (in + out))`.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, gain: f32, rng: &mut R) -> Self {
        let bound = gain * (6.0 / (inputs + outputs) as f32).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Dense {
            inputs,
            outputs,
            w,
            b: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f32], out: &mut [f32]) {
        out.copy_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.outputs..(i + 1) * self.outputs];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// Accumulates parameter gradients and, if requested, writes the
    /// gradient with respect to the input.
    fn backward(&self, x: &[f32], g_out: &[f32], grad: &mut Dense, g_in: Option<&mut [f32]>) {
        for (gb, &g) in grad.b.iter_mut().zip(g_out) {
            *gb += g;
        }
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut grad.w[i * self.outputs..(i + 1) * self.outputs];
            for (gw, &g) in row.iter_mut().zip(g_out) {
                *gw += xi * g;
            }
        }
        if let Some(g_in) = g_in {
            for (i, gi) in g_in.iter_mut().enumerate() {
                *gi = dot(&self.w[i * self.outputs..(i + 1) * self.outputs], g_out);
            }
        }
    }

    fn zeroed(&self) -> Dense {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f32> {
        self.w.iter().chain(self.b.iter())
    }
}

/// Eight independent accumulators so the reduction vectorizes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    /// `layers[0]` is the input; the rest are post-activation outputs.
    layers: Vec<Vec<f32>>,
}

impl Activations {
    pub fn output(&self) -> &[f32] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`; the last layer uses `out_gain`.
    pub fn new<R: Rng>(sizes: &[usize], out_gain: f32, rng: &mut R) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let gain = if k + 1 == n { out_gain } else { 5.0 / 3.0 };
                Dense::new(sizes[k], sizes[k + 1], gain, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Shapes agree layer to layer and buffers match declared sizes.
    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self
                .layers
                .iter()
                .all(|l| l.inputs.checked_mul(l.outputs) == Some(l.w.len()) && l.b.len() == l.outputs)
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self.layers.iter().all(|l| l.params().all(|p| p.is_finite()))
    }

    pub fn forward_into(&self, x: &[f32], acts: &mut Activations) {
        let n = self.layers.len();
        acts.layers.resize(n + 1, Vec::new());
        acts.layers[0].clear();
        acts.layers[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.layers.split_at_mut(k + 1);
            let out = &mut rest[0];
            out.resize(layer.outputs, 0.0);
            layer.forward(&done[k], out);
            if k + 1 < n {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let mut acts = Activations::default();
        self.forward_into(x, &mut acts);
        acts.layers.pop().unwrap_or_default()
    }

    /// Backpropagates `g_out` (gradient w.r.t. the linear output) and adds
    /// parameter gradients into `grad`.
    pub fn backward(&self, acts: &Activations, g_out: &[f32], grad: &mut Mlp) {
        let n = self.layers.len();
        let mut g = g_out.to_vec();
        let mut g_prev = Vec::new();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let input = &acts.layers[k];
            if k > 0 {
                g_prev.resize(layer.inputs, 0.0);
                layer.backward(input, &g, &mut grad.layers[k], Some(&mut g_prev));
                // through tanh: d tanh = 1 - y^2
                for (gp, &y) in g_prev.iter_mut().zip(input) {
                    *gp *= 1.0 - y * y;
                }
                std::mem::swap(&mut g, &mut g_prev);
            } else {
                layer.backward(input, &g, &mut grad.layers[k], None);
            }
        }
    }

    pub fn zeroed(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(Dense::zeroed).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.layers.iter_mut().for_each(|l| l.params_mut().for_each(|p| *p = 0.0));
    }

    pub fn scale(&mut self, s: f32) {
        self.layers.iter_mut().for_each(|l| l.params_mut().for_each(|p| *p *= s));
    }

    pub fn norm(&self) -> f32 {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p * p)
            .sum::<f32>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params().all(|p| p.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Mlp,
    v: Mlp,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            t: 0,
            m: net.zeroed(),
            v: net.zeroed(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(self.m.layers.iter_mut())
            .zip(self.v.layers.iter_mut())
        {
            for (((p, &g), m), v) in p.params_mut().zip(g.params()).zip(m.params_mut()).zip(v.params_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= step * *m / (v.sqrt() + self.eps);
            }
        }
    }
}
