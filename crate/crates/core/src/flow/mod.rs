//! Autoregressive rational-quadratic spline flow.
//!
//! The density direction (data → noise) is
//! `sigmoid → [masked spline → permutation] × layers → logit`, evaluated in
//! one pass per layer. Sampling inverts it, which is sequential over
//! coordinates within each spline layer.

pub mod made;
pub mod spline;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_site_ids, PanelMatrix, Scale};
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_for, rng_from};
use crate::special::norm_logpdf;
use crate::train::{Objective, Trainable};

pub use made::{MadeCache, MaskedConditioner};
pub use spline::{SplineKnots, MIN_BIN, MIN_DERIVATIVE};

/// Logit inputs are kept inside `[LOGIT_EPS, 1 − LOGIT_EPS]`.
pub const LOGIT_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub bins: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            bins: 8,
            layers: 4,
            hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bins < 2 || self.bins > 64 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Argument(format!("invalid flow configuration {self:?}")));
        }
        Ok(())
    }
}

/// Spline flow over a standard normal base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    net: MaskedConditioner,
    permutations: Vec<Vec<usize>>,
    params: Vec<f64>,
}

/// On-disk form: raw parameters plus permutations; masks are rebuilt.
#[derive(Serialize, Deserialize)]
struct FlowRepr {
    config: FlowConfig,
    permutations: Vec<Vec<usize>>,
    params: Vec<f64>,
}

impl Serialize for FlowModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FlowRepr {
            config: self.config,
            permutations: self.permutations.clone(),
            params: self.params.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FlowModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = FlowRepr::deserialize(de)?;
        FlowModel::from_parts(r.config, r.permutations, r.params).map_err(serde::de::Error::custom)
    }
}

/// Per-sample buffers for the density pass and its reverse sweep.
struct Workspace {
    inputs: Vec<Vec<f64>>,
    caches: Vec<MadeCache>,
    knots: Vec<Vec<SplineKnots>>,
    after: Vec<f64>,
    grad_s: Vec<f64>,
    grad_in: Vec<f64>,
    grad_raw: Vec<f64>,
    scratch: Vec<f64>,
    final_s: Vec<f64>,
    z: Vec<f64>,
}

impl Workspace {
    fn new(m: &FlowModel) -> Self {
        let c = m.config;
        let zero_raw = vec![0.0; spline::raw_len(c.bins)];
        Self {
            inputs: vec![vec![0.0; c.dim]; c.layers],
            caches: (0..c.layers).map(|_| MadeCache::new(&m.net)).collect(),
            knots: vec![vec![SplineKnots::from_raw(&zero_raw, c.bins); c.dim]; c.layers],
            after: vec![0.0; c.dim],
            grad_s: vec![0.0; c.dim],
            grad_in: vec![0.0; c.dim],
            grad_raw: vec![0.0; m.net.out_len()],
            scratch: vec![0.0; 2 * c.hidden],
            final_s: vec![0.0; c.dim],
            z: vec![0.0; c.dim],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ'(x) = −|x| − 2 ln(1 + e^{−|x|})`.
#[inline]
fn log_sigmoid_slope(x: f64) -> f64 {
    let a = x.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

#[inline]
fn logit(s: f64) -> f64 {
    s.ln() - (-s).ln_1p()
}

impl FlowModel {
    /// Randomly initialized flow. Output layers start at zero, so the spline
    /// layers are identities and only the permutations act.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = MaskedConditioner::new(config.dim, config.hidden, spline::raw_len(config.bins));
        let per = net.n_params();
        let mut params = vec![0.0; per * config.layers];
        let mut rng = rng_for(seed, 0xF10);
        for chunk in params.chunks_exact_mut(per) {
            net.init(chunk, &mut rng);
        }
        let mut prng = rng_for(seed, 0xBE7);
        let permutations = (0..config.layers)
            .map(|_| {
                let mut p: Vec<usize> = (0..config.dim).collect();
                p.shuffle(&mut prng);
                p
            })
            .collect();
        Ok(Self {
            config,
            net,
            permutations,
            params,
        })
    }

    /// Identity-initialized flow with identity permutations: the whole
    /// flow is the identity map.
    pub fn identity(config: FlowConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        for p in &mut m.permutations {
            p.sort_unstable();
        }
        Ok(m)
    }

    pub fn from_parts(config: FlowConfig, permutations: Vec<Vec<usize>>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let net = MaskedConditioner::new(config.dim, config.hidden, spline::raw_len(config.bins));
        check_dim(net.n_params() * config.layers, params.len())?;
        if permutations.len() != config.layers {
            return Err(Error::Format(format!(
                "expected {} permutations, found {}",
                config.layers,
                permutations.len()
            )));
        }
        for p in &permutations {
            let mut seen = vec![false; config.dim];
            if p.len() != config.dim || !p.iter().all(|&i| i < config.dim && !std::mem::replace(&mut seen[i], true)) {
                return Err(Error::Format(format!("invalid permutation {p:?}")));
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite flow parameter".into()));
        }
        let mut m = Self {
            config,
            net,
            permutations,
            params,
        };
        let per = m.net.n_params();
        for chunk in m.params.chunks_exact_mut(per) {
            m.net.apply_masks(chunk);
        }
        Ok(m)
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    pub fn conditioner(&self) -> &MaskedConditioner {
        &self.net
    }

    fn layer_params(&self, l: usize) -> &[f64] {
        let per = self.net.n_params();
        &self.params[l * per..(l + 1) * per]
    }

    /// Density pass on one point; fills the workspace and returns
    /// `(Σ log N(z), log|det ∂z/∂y|)`.
    fn pull_into(&self, y: &[f64], ws: &mut Workspace, strict: bool) -> Result<(f64, f64)> {
        let (dim, bins) = (self.config.dim, self.config.bins);
        let block = spline::raw_len(bins);
        let mut logdet = 0.0;
        let mut s = std::mem::take(&mut ws.after);
        for (si, &yi) in s.iter_mut().zip(y) {
            if !yi.is_finite() {
                return Err(Error::Numeric(format!("non-finite flow input {yi}")));
            }
            *si = sigmoid(yi);
            logdet += log_sigmoid_slope(yi);
        }
        for l in 0..self.config.layers {
            ws.inputs[l].copy_from_slice(&s);
            let params = &self.params[l * self.net.n_params()..(l + 1) * self.net.n_params()];
            self.net.forward(params, &ws.inputs[l], &mut ws.caches[l]);
            let mut out = vec![0.0; dim];
            for i in 0..dim {
                let knots = &mut ws.knots[l][i];
                knots.set_raw(&ws.caches[l].out[i * block..(i + 1) * block]);
                let p = knots.eval(ws.inputs[l][i]);
                out[i] = p.y;
                logdet += p.dlog;
            }
            for (i, &src) in self.permutations[l].iter().enumerate() {
                s[i] = out[src];
            }
        }
        let mut base = 0.0;
        for i in 0..dim {
            let mut v = s[i];
            if !(LOGIT_EPS..=1.0 - LOGIT_EPS).contains(&v) {
                if strict {
                    ws.after = s;
                    return Err(Error::Numeric(format!(
                        "point maps to {v} before the final logit; outside model support"
                    )));
                }
                v = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            }
            ws.final_s[i] = v;
            let z = logit(v);
            ws.z[i] = z;
            logdet += -v.ln() - (-v).ln_1p();
            base += norm_logpdf(z);
        }
        ws.after = s;
        if !(base.is_finite() && logdet.is_finite()) {
            return Err(Error::Numeric("non-finite log-density".into()));
        }
        Ok((base, logdet))
    }

    /// Reverse sweep of `weight · (−log density)` at the point last passed
    /// through [`FlowModel::pull_into`]; parameter gradients are added into
    /// `grad`.
    fn nll_backward(&self, ws: &mut Workspace, weight: f64, grad: &mut [f64]) {
        let dim = self.config.dim;
        let block = spline::raw_len(self.config.bins);
        let per = self.net.n_params();
        for i in 0..dim {
            let s = ws.final_s[i];
            let z = ws.z[i];
            ws.grad_s[i] = weight * (z / (s * (1.0 - s)) + 1.0 / s - 1.0 / (1.0 - s));
        }
        for l in (0..self.config.layers).rev() {
            let mut g_out = std::mem::take(&mut ws.grad_in);
            for (i, &src) in self.permutations[l].iter().enumerate() {
                g_out[src] = ws.grad_s[i];
            }
            ws.grad_raw.fill(0.0);
            for i in 0..dim {
                let gx = ws.knots[l][i].backward(
                    ws.inputs[l][i],
                    g_out[i],
                    -weight,
                    &mut ws.grad_raw[i * block..(i + 1) * block],
                );
                ws.grad_s[i] = gx;
            }
            ws.grad_in = g_out;
            let params = &self.params[l * per..(l + 1) * per];
            self.net.backward(
                params,
                &ws.inputs[l],
                &ws.caches[l],
                &ws.grad_raw,
                &mut grad[l * per..(l + 1) * per],
                &mut ws.grad_s,
                &mut ws.scratch,
            );
        }
    }

    /// Data → noise: returns `z` and `log|det ∂z/∂y|`.
    pub fn flow_pull(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim(), y.len())?;
        let mut ws = Workspace::new(self);
        let (_, logdet) = self.pull_into(y, &mut ws, true)?;
        Ok((ws.z, logdet))
    }

    /// Noise → data.
    pub fn flow_push(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        let mut cache = MadeCache::new(&self.net);
        let zero_raw = vec![0.0; spline::raw_len(self.config.bins)];
        let mut knots = SplineKnots::from_raw(&zero_raw, self.config.bins);
        let mut x = vec![0.0; self.dim()];
        self.push_with(z, &mut cache, &mut knots, &mut x)
    }

    fn push_with(
        &self,
        z: &[f64],
        cache: &mut MadeCache,
        knots: &mut SplineKnots,
        x: &mut [f64],
    ) -> Result<Vec<f64>> {
        let dim = self.dim();
        let block = spline::raw_len(self.config.bins);
        let mut s: Vec<f64> = z
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    Ok(sigmoid(v))
                } else {
                    Err(Error::Numeric(format!("non-finite noise value {v}")))
                }
            })
            .collect::<Result<_>>()?;
        let mut target = vec![0.0; dim];
        for l in (0..self.config.layers).rev() {
            for (i, &src) in self.permutations[l].iter().enumerate() {
                target[src] = s[i];
            }
            let params = self.layer_params(l);
            x.fill(0.0);
            for i in 0..dim {
                self.net.forward_block(params, x, i, cache);
                knots.set_raw(&cache.out[i * block..(i + 1) * block]);
                x[i] = knots.invert_value(target[i]);
            }
            s.copy_from_slice(x);
        }
        let y: Vec<f64> = s
            .iter()
            .map(|&v| logit(v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS)))
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite flow output".into()));
        }
        Ok(y)
    }

    /// Exact log-density under the change of variables.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        let mut ws = Workspace::new(self);
        let (base, logdet) = self.pull_into(y, &mut ws, true)?;
        Ok(base + logdet)
    }

    /// Sum of log-densities over the rows of `data`.
    pub fn log_likelihood(&self, data: &PanelMatrix) -> Result<f64> {
        check_dim(self.dim(), data.n_site())?;
        let mut ws = Workspace::new(self);
        let mut total = 0.0;
        for row in data.rows() {
            let (base, logdet) = self.pull_into(row, &mut ws, true)?;
            total += base + logdet;
        }
        Ok(total)
    }

    /// `n` draws pushed from standard normal noise.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PanelMatrix> {
        if n == 0 {
            return Err(Error::Argument("sample size must be at least 1".into()));
        }
        let dim = self.dim();
        let mut rng = rng_from(seed);
        let mut cache = MadeCache::new(&self.net);
        let mut knots = SplineKnots::from_raw(&vec![0.0; spline::raw_len(self.config.bins)], self.config.bins);
        let mut x = vec![0.0; dim];
        let mut z = vec![0.0; dim];
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            values.extend(self.push_with(&z, &mut cache, &mut knots, &mut x)?);
        }
        if n == 1 {
            // PanelMatrix needs two rows; duplicate-free single draws are returned via flow_push.
            return Err(Error::Argument("use flow_push for a single draw".into()));
        }
        PanelMatrix::new(values, n, default_site_ids(dim), Scale::Normal)
    }
}

impl Trainable for FlowModel {
    fn objective(&self) -> Objective {
        Objective::NegativeLogLikelihood
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn free_params(&self) -> Vec<bool> {
        let one = self.net.free_params();
        (0..self.config.layers).flat_map(|_| one.iter().copied()).collect()
    }

    fn loss(&self, batch: &[&[f64]], _noise_seed: u64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut ws = Workspace::new(self);
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for row in batch {
            check_dim(self.dim(), row.len())?;
            let (base, logdet) = self.pull_into(row, &mut ws, true)?;
            total -= base + logdet;
            if let Some(g) = grad.as_deref_mut() {
                self.nll_backward(&mut ws, w, g);
            }
        }
        Ok(total * w)
    }

    fn pieces(&self, batch: &[&[f64]], _noise_seed: u64) -> Result<Vec<u32>> {
        let mut ws = Workspace::new(self);
        let mut out = Vec::new();
        for row in batch {
            self.pull_into(row, &mut ws, true)?;
            for l in 0..self.config.layers {
                self.net.push_pattern(&ws.caches[l], &mut out);
                for i in 0..self.dim() {
                    out.push(ws.knots[l][i].eval(ws.inputs[l][i]).bin as u32);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn small(dim: usize) -> FlowConfig {
        FlowConfig {
            dim,
            bins: 4,
            layers: 2,
            hidden: 8,
        }
    }

    fn perturbed(config: FlowConfig, seed: u64, scale: f64) -> FlowModel {
        let mut m = FlowModel::new(config, seed).unwrap();
        let mut rng = rng_from(seed ^ 77);
        for p in m.params_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *p += scale * e;
        }
        let per = m.net.n_params();
        let net = m.net.clone();
        for chunk in m.params.chunks_exact_mut(per) {
            net.apply_masks(chunk);
        }
        m
    }

    #[test]
    fn identity_model_is_identity() {
        let m = FlowModel::identity(FlowConfig::new(3), 1).unwrap();
        let mut rng = rng_from(2);
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y = m.flow_push(&z).unwrap();
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).abs() < 1e-9);
            }
            let lp = m.log_density(&z).unwrap();
            let expected: f64 = z.iter().map(|&v| norm_logpdf(v)).sum();
            assert!((lp - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn fresh_model_density_is_standard_normal() {
        // random permutations do not change a product density
        let m = FlowModel::new(FlowConfig::new(4), 3).unwrap();
        let y = [0.3, -1.2, 2.0, 0.0];
        let expected: f64 = y.iter().map(|&v| norm_logpdf(v)).sum();
        assert!((m.log_density(&y).unwrap() - expected).abs() < 1e-8);
    }

    #[test]
    fn roundtrip_on_random_parameters() {
        let m = perturbed(FlowConfig::new(3), 4, 0.3);
        let mut rng = rng_from(5);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y = m.flow_push(&z).unwrap();
            let (zb, _) = m.flow_pull(&y).unwrap();
            for (a, b) in z.iter().zip(&zb) {
                worst = worst.max((a - b).abs());
            }
            assert_eq!(y, m.flow_push(&z).unwrap());
        }
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn logdet_matches_numerical_jacobian() {
        let m = perturbed(FlowConfig::new(3), 6, 0.3);
        let y = [0.4, -0.7, 1.1];
        let (_, logdet) = m.flow_pull(&y).unwrap();
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut yp = y;
            yp[j] += h;
            let mut ym = y;
            ym[j] -= h;
            let (zp, _) = m.flow_pull(&yp).unwrap();
            let (zm, _) = m.flow_pull(&ym).unwrap();
            for i in 0..3 {
                jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        let det: f64 = jac.determinant();
        assert!((det.abs().ln() - logdet).abs() < 1e-6, "{} vs {logdet}", det.abs().ln());
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let cfg = small(3);
        let m = perturbed(cfg, 7, 0.5);
        let mut rng = rng_from(8);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let err = crate::train::gradient_check(&m, &batch, 0).unwrap();
        assert!(err.max_rel_error < 1e-4 && err.checked > 10 * err.skipped, "{err:?}");
    }

    #[test]
    fn outside_support_is_an_error() {
        let m = FlowModel::identity(FlowConfig::new(1), 0).unwrap();
        assert!(m.log_density(&[40.0]).is_err());
        assert!(m.log_density(&[f64::NAN]).is_err());
        assert!(m.flow_push(&[f64::INFINITY]).is_err());
        // sampling clamps silently
        let y = m.flow_push(&[40.0]).unwrap();
        assert!(y[0].is_finite());
    }

    #[test]
    fn sampling_is_seeded() {
        let m = perturbed(small(2), 9, 0.2);
        assert_eq!(m.sample(50, 3).unwrap(), m.sample(50, 3).unwrap());
        assert_ne!(m.sample(50, 3).unwrap(), m.sample(50, 4).unwrap());
    }

    #[test]
    fn identity_sample_mean_is_near_zero() {
        let m = FlowModel::identity(FlowConfig::new(2), 0).unwrap();
        let n = 20_000;
        let s = m.sample(n, 12).unwrap();
        for c in 0..2 {
            let mean = s.column(c).iter().sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let m = perturbed(small(3), 10, 0.4);
        let text = serde_json::to_string(&m).unwrap();
        let back: FlowModel = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(text, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn rejects_bad_permutations() {
        let m = FlowModel::new(small(3), 0).unwrap();
        let mut perms = m.permutations.clone();
        perms[0] = vec![0, 0, 1];
        assert!(FlowModel::from_parts(m.config, perms, m.params.clone()).is_err());
    }
}
