//! Adam-based minibatch training and finite-difference gradient checks.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PanelMatrix;
use crate::error::{check_dim, Error, Result};
use crate::io::write_atomic;
use crate::rng::{derive_seed, rng_for};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    NegativeLogLikelihood,
    EnergyDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64, objective: Objective) -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 100,
            epochs,
            seed,
            objective,
        }
    }

    pub fn validate(&self, n_obs: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.batch_size > n_obs {
            return Err(Error::Argument(format!(
                "batch size {} must lie in [1, {n_obs}]",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// A model whose parameters live in one flat vector.
pub trait Trainable {
    fn objective(&self) -> Objective;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Parameters that are structurally fixed (e.g. masked weights) are
    /// `false`; they always receive zero gradient.
    fn free_params(&self) -> Vec<bool> {
        vec![true; self.params().len()]
    }

    /// Mean loss over `batch`. When `grad` is given it is overwritten with
    /// the gradient. `noise_seed` drives any internal randomness.
    fn loss(&self, batch: &[&[f64]], noise_seed: u64, grad: Option<&mut [f64]>) -> Result<f64>;

    /// Identifies the smooth piece of a piecewise-smooth loss; finite
    /// differences are only meaningful when it is unchanged.
    fn pieces(&self, _batch: &[&[f64]], _noise_seed: u64) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.m.len())?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Per-epoch mean loss, weighted by batch size.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
}

/// Row visiting order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(derive_seed(seed, 0x5EED), epoch as u64));
    idx
}

pub fn train<M: Trainable>(model: &mut M, data: &PanelMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let seed = cfg.seed;
    train_with_schedule(model, data, cfg, |n, epoch| epoch_order(n, seed, epoch))
}

/// As [`train`], with the per-epoch row order supplied by `schedule`.
pub fn train_with_schedule<M, F>(model: &mut M, data: &PanelMatrix, cfg: &TrainConfig, mut schedule: F) -> Result<TrainOutcome>
where
    M: Trainable,
    F: FnMut(usize, usize) -> Vec<usize>,
{
    let n = data.n_obs();
    cfg.validate(n)?;
    if cfg.objective != model.objective() {
        return Err(Error::Argument(format!(
            "objective {:?} does not match model objective {:?}",
            cfg.objective,
            model.objective()
        )));
    }
    let n_params = model.params().len();
    let mut state = AdamState::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut trace = Vec::with_capacity(cfg.epochs);
    let noise_base = derive_seed(cfg.seed, 0x4015E);
    for epoch in 0..cfg.epochs {
        let order = schedule(n, epoch);
        if order.len() != n {
            return Err(Error::Argument(format!("schedule returned {} rows, expected {n}", order.len())));
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f64]> = chunk.iter().map(|&r| data.row(r)).collect();
            let loss = model
                .loss(&batch, derive_seed(noise_base, state.step()), Some(&mut grad))
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam_step(model.params_mut(), &grad, &mut state, cfg.learning_rate)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            total += loss * chunk.len() as f64;
        }
        trace.push(total / n as f64);
    }
    Ok(TrainOutcome {
        loss_trace: trace,
        steps: state.step(),
    })
}

pub fn write_loss_trace(trace: &[f64], mut w: impl Write) -> Result<()> {
    writeln!(w, "epoch,mean_loss")?;
    for (e, l) in trace.iter().enumerate() {
        writeln!(w, "{},{:?}", e + 1, l)?;
    }
    Ok(())
}

pub fn save_loss_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| write_loss_trace(trace, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because a ± perturbation crossed a kink.
    pub skipped: usize,
}

pub const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-2;

/// Compares the analytic gradient with central differences. The relative
/// error is `|g − fd| / max(|g|, |fd|, 0.01)`.
pub fn gradient_check<M: Trainable + Clone>(model: &M, batch: &[&[f64]], noise_seed: u64) -> Result<GradCheck> {
    let n = model.params().len();
    let mut grad = vec![0.0; n];
    model.loss(batch, noise_seed, Some(&mut grad))?;
    let base_pieces = model.pieces(batch, noise_seed)?;
    let free = model.free_params();
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..n {
        if !free[i] {
            if grad[i] != 0.0 {
                out.max_rel_error = f64::INFINITY;
            }
            continue;
        }
        let orig = model.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let up = probe.loss(batch, noise_seed, None)?;
        let up_pieces = probe.pieces(batch, noise_seed)?;
        probe.params_mut()[i] = orig - FD_STEP;
        let down = probe.loss(batch, noise_seed, None)?;
        let down_pieces = probe.pieces(batch, noise_seed)?;
        probe.params_mut()[i] = orig;
        if up_pieces != base_pieces || down_pieces != base_pieces {
            out.skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(REL_FLOOR);
        out.max_rel_error = out.max_rel_error.max(err);
        out.checked += 1;
    }
    Ok(out)
}
