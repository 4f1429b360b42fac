//! Feedforward generator trained on the squared energy distance.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::{default_site_ids, PanelMatrix, Scale};
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_for, rng_from};
use crate::train::{self, Objective, TrainConfig, TrainOutcome, Trainable};

/// Hidden widths of the reference architecture.
pub const DEFAULT_HIDDEN: [usize; 6] = [100, 200, 400, 400, 200, 100];

/// ReLU multilayer perceptron mapping `L`-dimensional noise to `d` outputs.
///
/// Parameters are stored flat, layer by layer: the weight matrix
/// (`out × in`, column-major) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl GeneratorNet {
    /// Randomly initialized network; weights and biases are uniform on
    /// `±1/√fan_in`.
    pub fn new(widths: Vec<usize>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = rng_for(seed, 0x6E4);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Argument(e.to_string()))?;
            let (w, b) = net.layer_offsets(l);
            for p in &mut net.params[w..b + fan_out] {
                *p = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Argument(format!("invalid generator widths {widths:?}")));
        }
        let n: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            widths,
            params: vec![0.0; n],
        })
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        check_dim(net.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite generator parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    /// `noise_dim → 100 → 200 → 400 → 400 → 200 → 100 → d`.
    pub fn default_widths(noise_dim: usize, d: usize) -> Vec<usize> {
        let mut w = vec![noise_dim];
        w.extend(DEFAULT_HIDDEN);
        w.push(d);
        w
    }

    /// The same architecture with its first layer removed, fed with
    /// 100-dimensional noise.
    pub fn wide_noise_widths(d: usize) -> Vec<usize> {
        let mut w = DEFAULT_HIDDEN.to_vec();
        w.push(d);
        w
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn noise_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        (off, off + self.widths[l] * self.widths[l + 1])
    }

    fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        let (w, _) = self.layer_offsets(l);
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        DMatrixView::from_slice(&self.params[w..w + i * o], o, i)
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_offsets(l);
        &self.params[b..b + self.widths[l + 1]]
    }

    /// Batched forward pass on columns of `z`; returns the post-activation
    /// of every layer (the last one is linear).
    fn forward_batch(&self, z: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(z);
        for l in 0..self.n_layers() {
            let mut h = self.weight(l) * acts.last().unwrap();
            let b = self.bias(l);
            let last = l + 1 == self.n_layers();
            for mut col in h.column_iter_mut() {
                for (v, &bi) in col.iter_mut().zip(b) {
                    *v += bi;
                    if !last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(h);
        }
        acts
    }

    /// Backpropagates `g_out` (gradient w.r.t. the output columns) and
    /// writes parameter gradients into `grad`.
    fn backward_batch(&self, acts: &[DMatrix<f64>], mut g: DMatrix<f64>, grad: &mut [f64]) {
        for l in (0..self.n_layers()).rev() {
            if l + 1 < self.n_layers() {
                g.zip_apply(&acts[l + 1], |gv, a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let (w, b) = self.layer_offsets(l);
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[w..w + i * o], o, i);
                gw.gemm(1.0, &g, &acts[l].transpose(), 0.0);
            }
            for (r, gb) in grad[b..b + o].iter_mut().enumerate() {
                *gb = g.row(r).sum();
            }
            if l > 0 {
                g = self.weight(l).transpose() * &g;
            }
        }
    }

    fn noise_batch(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        let mut z = DMatrix::zeros(self.noise_dim(), n);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        z
    }

    /// `n` generator outputs from seeded standard normal noise.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PanelMatrix> {
        if n < 2 {
            return Err(Error::Argument("sample size must be at least 2".into()));
        }
        let acts = self.forward_batch(self.noise_batch(n, seed));
        let out = acts.last().unwrap().transpose();
        let mut values = Vec::with_capacity(n * self.out_dim());
        for r in 0..n {
            values.extend(out.row(r).iter());
        }
        PanelMatrix::new(values, n, default_site_ids(self.out_dim()), Scale::Normal)
    }
}

/// Single-point evaluation of the generator.
pub fn generator_forward(net: &GeneratorNet, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(net.noise_dim(), z.len())?;
    let acts = net.forward_batch(DMatrix::from_column_slice(z.len(), 1, z));
    Ok(acts.last().unwrap().column(0).iter().copied().collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cross(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let s: f64 = a.iter().map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>()).sum();
    s / (a.len() * b.len()) as f64
}

fn mean_within(a: &[&[f64]]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..i {
            s += dist(a[i], a[j]);
        }
    }
    2.0 * s / (a.len() * a.len()) as f64
}

/// V-statistic estimate of `2E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖`.
pub fn energy_distance_sq<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("energy distance needs non-empty samples".into()));
    }
    let a: Vec<&[f64]> = a.iter().map(AsRef::as_ref).collect();
    let b: Vec<&[f64]> = b.iter().map(AsRef::as_ref).collect();
    let d = a[0].len();
    for r in a.iter().chain(&b) {
        check_dim(d, r.len())?;
    }
    let cross = mean_cross(&a, &b) + mean_cross(&b, &a);
    Ok(cross - (mean_within(&a) + mean_within(&b)))
}

/// Energy distance between `data` and `out` (columns), with the gradient
/// with respect to every generated point.
fn energy_with_grad(data: &[&[f64]], out: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (d, m) = out.shape();
    let n = data.len();
    let gen: Vec<&[f64]> = (0..m).map(|j| &out.as_slice()[j * d..(j + 1) * d]).collect();
    let loss = 2.0 * mean_cross(data, &gen) - mean_within(data) - mean_within(&gen);
    let mut g = DMatrix::zeros(d, m);
    let cross = 2.0 / (n * m) as f64;
    let within = 2.0 / (m * m) as f64;
    for j in 0..m {
        let bj = gen[j];
        let mut col = g.column_mut(j);
        for a in data {
            let r = dist(bj, a);
            if r > 0.0 {
                for k in 0..d {
                    col[k] += cross * (bj[k] - a[k]) / r;
                }
            }
        }
        for (l, bl) in gen.iter().enumerate() {
            if l == j {
                continue;
            }
            let r = dist(bj, bl);
            if r > 0.0 {
                for k in 0..d {
                    col[k] -= within * (bj[k] - bl[k]) / r;
                }
            }
        }
    }
    (loss, g)
}

impl Trainable for GeneratorNet {
    fn objective(&self) -> Objective {
        Objective::EnergyDistance
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Energy distance between the batch and an equal-size generated batch
    /// drawn with `noise_seed`.
    fn loss(&self, batch: &[&[f64]], noise_seed: u64, grad: Option<&mut [f64]>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        for r in batch {
            check_dim(self.out_dim(), r.len())?;
        }
        let acts = self.forward_batch(self.noise_batch(batch.len(), noise_seed));
        let (loss, g_out) = energy_with_grad(batch, acts.last().unwrap());
        if let Some(grad) = grad {
            check_dim(self.params.len(), grad.len())?;
            self.backward_batch(&acts, g_out, grad);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite energy distance".into()));
        }
        Ok(loss)
    }

    fn pieces(&self, batch: &[&[f64]], noise_seed: u64) -> Result<Vec<u32>> {
        let acts = self.forward_batch(self.noise_batch(batch.len(), noise_seed));
        Ok(acts[1..acts.len() - 1]
            .iter()
            .flat_map(|a| a.iter().map(|&v| u32::from(v > 0.0)))
            .collect())
    }
}

pub fn train_gmmn(net: &mut GeneratorNet, data: &PanelMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.scale() != Scale::Normal {
        return Err(Error::Argument("generator training expects normal-score data".into()));
    }
    check_dim(net.out_dim(), data.n_site())?;
    train::train(net, data, cfg)
}
