//! Experiment configuration (TOML). Every field except `seed` and the data
//! source has a default; relative paths resolve against the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teletail::gmmn::GeneratorNet;
use teletail::pca::DEFAULT_COMPONENTS;
use teletail::train::{Objective, TrainConfig};
use teletail::eval::ModelSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sample: SampleConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataScale {
    /// Raw observations; ranked to pseudo-observations, then normal scores.
    #[default]
    Raw,
    /// Already normal scores.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub scale: DataScale,
    pub synth: Option<SynthSpec>,
    /// CSV with columns lon1, lat1, lon2, lat2, one row per site.
    pub gridboxes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SynthSpec {
    BivariateT { n: usize, nu: f64, rho: f64 },
    Gaussian { n: usize, d: usize, rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Flow,
    #[default]
    PcaFlow,
    Gmmn,
    Vine,
    /// The synthetic data generator itself; cross-validation only.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    #[serde(rename = "type")]
    pub kind: ModelKind,
    pub components: usize,
    pub bins: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Generator noise dimension; the data dimension when absent.
    pub noise_dim: Option<usize>,
    /// Generator hidden widths; the default stack when absent.
    pub gmmn_hidden: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::default(),
            components: DEFAULT_COMPONENTS,
            bins: 8,
            layers: 4,
            hidden: 32,
            noise_dim: None,
            gmmn_hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 100,
            epochs: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    #[default]
    Crossval,
    Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub quantiles: Vec<f64>,
    pub n_gen: usize,
    /// Site id used as the reference for distance profiles; the first site
    /// when absent.
    pub reference_site: Option<String>,
    pub profile_bins: usize,
    /// Upper edge of the distance profile; the largest pair distance when
    /// absent.
    pub max_distance_km: Option<f64>,
    pub report_source: ReportSource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            quantiles: vec![0.95],
            n_gen: 100_000,
            reference_site: None,
            profile_bins: 10,
            max_distance_km: None,
            report_source: ReportSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Number of draws; `eval.n_gen` when absent.
    pub n: Option<usize>,
    pub marginal_correction: bool,
    /// Checkpoint to sample from; `<out_dir>/checkpoint.json` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Sample compared by `metrics`; `<out_dir>/sample.csv` when absent.
    pub path: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: None,
            marginal_correction: true,
            checkpoint: None,
            path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads, validates and resolves relative paths against the file's
    /// directory. Returns the raw bytes for hashing as well.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config("config is not valid UTF-8".into()))?;
        let mut cfg = Self::parse(text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok((cfg, bytes))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            self.data.path.as_mut(),
            self.data.gridboxes.as_mut(),
            self.sample.checkpoint.as_mut(),
            self.sample.path.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.data.path, &self.data.synth) {
            (Some(_), Some(_)) => return bad("data: give either `path` or `synth`, not both".into()),
            (None, None) => return bad("data: one of `path` or `synth` is required".into()),
            _ => {}
        }
        if let Some(s) = &self.data.synth {
            match *s {
                SynthSpec::BivariateT { n, nu, rho } => {
                    if n == 0 || !(nu > 0.0) || !(rho > -1.0 && rho < 1.0) {
                        return bad("data.synth: need n > 0, nu > 0 and rho in (-1, 1)".into());
                    }
                }
                SynthSpec::Gaussian { n, d, rho } => {
                    if n == 0 || d < 2 || !(rho > -1.0 / (d as f64 - 1.0) && rho < 1.0) {
                        return bad("data.synth: need n > 0, d >= 2 and rho in (-1/(d-1), 1)".into());
                    }
                }
            }
        }
        let m = &self.model;
        if m.bins < 2 || m.layers == 0 || m.hidden == 0 || m.components == 0 {
            return bad("model: bins >= 2 and positive layers, hidden and components are required".into());
        }
        if m.noise_dim == Some(0) || m.gmmn_hidden.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
            return bad("model: generator widths must be positive".into());
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) || t.batch_size == 0 || t.epochs == 0 {
            return bad("train: learning_rate, batch_size and epochs must be positive".into());
        }
        let e = &self.eval;
        if e.folds < 2 {
            return bad("eval.folds must be at least 2".into());
        }
        if e.quantiles.is_empty() || e.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return bad("eval.quantiles must be a non-empty list of levels in (0, 1)".into());
        }
        if e.n_gen < 2 || e.profile_bins == 0 || e.max_distance_km.is_some_and(|x| !(x > 0.0)) {
            return bad("eval: n_gen >= 2, profile_bins >= 1 and a positive max_distance_km are required".into());
        }
        if self.sample.n.is_some_and(|n| n < 2) {
            return bad("sample.n must be at least 2".into());
        }
        Ok(())
    }

    fn train_config(&self, objective: Objective) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            objective,
        }
    }

    /// Model specification for data of dimension `d`; `None` for the oracle.
    pub fn model_spec(&self, d: usize) -> Option<ModelSpec> {
        let m = &self.model;
        Some(match m.kind {
            ModelKind::Flow => ModelSpec::Flow {
                bins: m.bins,
                layers: m.layers,
                hidden: m.hidden,
                train: self.train_config(Objective::NegativeLogLikelihood),
            },
            ModelKind::PcaFlow => ModelSpec::PcaFlow {
                components: m.components,
                bins: m.bins,
                layers: m.layers,
                hidden: m.hidden,
                train: self.train_config(Objective::NegativeLogLikelihood),
            },
            ModelKind::Gmmn => {
                let noise = m.noise_dim.unwrap_or(d);
                let widths = match &m.gmmn_hidden {
                    Some(h) => {
                        let mut w = vec![noise];
                        w.extend(h);
                        w.push(d);
                        w
                    }
                    None => GeneratorNet::default_widths(noise, d),
                };
                ModelSpec::Gmmn {
                    widths,
                    train: self.train_config(Objective::EnergyDistance),
                }
            }
            ModelKind::Vine => ModelSpec::Vine,
            ModelKind::Oracle => return None,
        })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.sample.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    pub fn sample_path(&self) -> PathBuf {
        self.sample.path.clone().unwrap_or_else(|| self.out_dir.join("sample.csv"))
    }
}
