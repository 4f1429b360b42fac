//! Masked autoregressive conditioner.
//!
//! Two ReLU hidden layers with connectivity masks so that output block `i`
//! (the raw spline parameters of coordinate `i`) only sees inputs `< i`.
//! Parameters live in a caller-owned flat slice laid out as
//! `W1 (H×ℓ), b1 (H), W2 (H×H), b2 (H), W3 (ℓP×H), b3 (ℓP)`, row-major.

use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedConditioner {
    dim: usize,
    hidden: usize,
    block: usize,
    mask1: Vec<bool>,
    mask2: Vec<bool>,
    mask3: Vec<bool>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MadeCache {
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub act2: Vec<f64>,
    pub out: Vec<f64>,
}

impl MadeCache {
    pub fn new(net: &MaskedConditioner) -> Self {
        let h = net.hidden;
        Self {
            pre1: vec![0.0; h],
            act1: vec![0.0; h],
            pre2: vec![0.0; h],
            act2: vec![0.0; h],
            out: vec![0.0; net.out_len()],
        }
    }
}

impl MaskedConditioner {
    /// `dim` inputs, `hidden` units per layer, `block` raw outputs per input.
    pub fn new(dim: usize, hidden: usize, block: usize) -> Self {
        let in_deg: Vec<usize> = (1..=dim).collect();
        let span = dim.saturating_sub(1).max(1);
        let hid_deg: Vec<usize> = (0..hidden).map(|k| k % span + 1).collect();
        let mut mask1 = vec![false; hidden * dim];
        for k in 0..hidden {
            for j in 0..dim {
                mask1[k * dim + j] = hid_deg[k] >= in_deg[j];
            }
        }
        let mut mask2 = vec![false; hidden * hidden];
        for k in 0..hidden {
            for m in 0..hidden {
                mask2[k * hidden + m] = hid_deg[k] >= hid_deg[m];
            }
        }
        let mut mask3 = vec![false; dim * block * hidden];
        for o in 0..dim * block {
            let out_deg = o / block + 1;
            for k in 0..hidden {
                mask3[o * hidden + k] = out_deg > hid_deg[k];
            }
        }
        Self {
            dim,
            hidden,
            block,
            mask1,
            mask2,
            mask3,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn out_len(&self) -> usize {
        self.dim * self.block
    }

    pub fn n_params(&self) -> usize {
        let (d, h, o) = (self.dim, self.hidden, self.out_len());
        h * d + h + h * h + h + o * h + o
    }

    fn offsets(&self) -> [usize; 6] {
        let (d, h, o) = (self.dim, self.hidden, self.out_len());
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        [w1, b1, w2, b2, w3, b3]
    }

    /// Uniform(±1/√fan_in) for the hidden layers, zeros for the output layer.
    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let [w1, b1, w2, b2, _, _] = self.offsets();
        let (d, h) = (self.dim, self.hidden);
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (h as f64).sqrt();
        for p in &mut params[w1..b1] {
            *p = rng.random_range(-a1..a1);
        }
        for p in &mut params[b1..w2] {
            *p = rng.random_range(-a1..a1);
        }
        for p in &mut params[w2..b2] {
            *p = rng.random_range(-a2..a2);
        }
        for p in &mut params[b2..b2 + h] {
            *p = rng.random_range(-a2..a2);
        }
        for p in &mut params[b2 + h..] {
            *p = 0.0;
        }
        self.apply_masks(params);
    }

    /// `false` for weights removed by the connectivity masks.
    pub fn free_params(&self) -> Vec<bool> {
        let [_, b1, _, b2, _, b3] = self.offsets();
        let (h, o) = (self.hidden, self.out_len());
        let mut free = Vec::with_capacity(self.n_params());
        free.extend_from_slice(&self.mask1);
        free.extend(std::iter::repeat_n(true, b1 + h - free.len()));
        free.extend_from_slice(&self.mask2);
        free.extend(std::iter::repeat_n(true, b2 + h - free.len()));
        free.extend_from_slice(&self.mask3);
        free.extend(std::iter::repeat_n(true, b3 + o - free.len()));
        debug_assert_eq!(free.len(), self.n_params());
        free
    }

    /// Zeroes every masked-out weight.
    pub fn apply_masks(&self, params: &mut [f64]) {
        let [w1, _, w2, _, w3, _] = self.offsets();
        for (p, &m) in params[w1..].iter_mut().zip(&self.mask1) {
            if !m {
                *p = 0.0;
            }
        }
        for (p, &m) in params[w2..].iter_mut().zip(&self.mask2) {
            if !m {
                *p = 0.0;
            }
        }
        for (p, &m) in params[w3..].iter_mut().zip(&self.mask3) {
            if !m {
                *p = 0.0;
            }
        }
    }

    fn hidden_pass(&self, params: &[f64], x: &[f64], cache: &mut MadeCache) {
        let [w1, b1, w2, b2, _, _] = self.offsets();
        let (d, h) = (self.dim, self.hidden);
        for k in 0..h {
            let row = &params[w1 + k * d..w1 + (k + 1) * d];
            let a = params[b1 + k] + dot(row, x);
            cache.pre1[k] = a;
            cache.act1[k] = a.max(0.0);
        }
        for k in 0..h {
            let row = &params[w2 + k * h..w2 + (k + 1) * h];
            let a = params[b2 + k] + dot(row, &cache.act1);
            cache.pre2[k] = a;
            cache.act2[k] = a.max(0.0);
        }
    }

    /// Full forward pass; raw outputs land in `cache.out`.
    pub fn forward(&self, params: &[f64], x: &[f64], cache: &mut MadeCache) {
        self.hidden_pass(params, x, cache);
        let [_, _, _, _, w3, b3] = self.offsets();
        let h = self.hidden;
        for o in 0..self.out_len() {
            let row = &params[w3 + o * h..w3 + (o + 1) * h];
            cache.out[o] = params[b3 + o] + dot(row, &cache.act2);
        }
    }

    /// Forward pass computing only output block `i`.
    pub fn forward_block(&self, params: &[f64], x: &[f64], i: usize, cache: &mut MadeCache) {
        self.hidden_pass(params, x, cache);
        let [_, _, _, _, w3, b3] = self.offsets();
        let h = self.hidden;
        for o in i * self.block..(i + 1) * self.block {
            let row = &params[w3 + o * h..w3 + (o + 1) * h];
            cache.out[o] = params[b3 + o] + dot(row, &cache.act2);
        }
    }

    /// Backpropagates `g_out` (gradient w.r.t. raw outputs) through the
    /// network. Parameter gradients are added into `g_params`, input
    /// gradients into `g_x`. `scratch` must hold at least `2·H` values.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        cache: &MadeCache,
        g_out: &[f64],
        g_params: &mut [f64],
        g_x: &mut [f64],
        scratch: &mut [f64],
    ) {
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let (d, h) = (self.dim, self.hidden);
        let (g2, g1) = scratch[..2 * h].split_at_mut(h);
        g2.fill(0.0);
        for o in 0..self.out_len() {
            let g = g_out[o];
            if g == 0.0 {
                continue;
            }
            g_params[b3 + o] += g;
            let row = w3 + o * h;
            let mask = &self.mask3[o * h..(o + 1) * h];
            for k in 0..h {
                if mask[k] {
                    g_params[row + k] += g * cache.act2[k];
                    g2[k] += g * params[row + k];
                }
            }
        }
        g1.fill(0.0);
        for k in 0..h {
            if cache.pre2[k] <= 0.0 {
                continue;
            }
            let g = g2[k];
            g_params[b2 + k] += g;
            let row = w2 + k * h;
            let mask = &self.mask2[k * h..(k + 1) * h];
            for m in 0..h {
                if mask[m] {
                    g_params[row + m] += g * cache.act1[m];
                    g1[m] += g * params[row + m];
                }
            }
        }
        for k in 0..h {
            if cache.pre1[k] <= 0.0 {
                continue;
            }
            let g = g1[k];
            g_params[b1 + k] += g;
            let row = w1 + k * d;
            for j in 0..d {
                if self.mask1[k * d + j] {
                    g_params[row + j] += g * x[j];
                    g_x[j] += g * params[row + j];
                }
            }
        }
    }

    /// Sign pattern of the hidden pre-activations (for piecewise checks).
    pub fn push_pattern(&self, cache: &MadeCache, out: &mut Vec<u32>) {
        out.extend(cache.pre1.iter().chain(&cache.pre2).map(|&a| u32::from(a > 0.0)));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
