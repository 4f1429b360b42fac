use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use teletail::dataset::{kfold_split, load_csv, normal_scores, pseudo_observations, save_csv, CopulaMatrix, PanelMatrix, Scale};
use teletail::eval::{
    compare_samples, cv_run, distance_profile, emit_report, equal_width_edges, read_report, write_profile_csv, CvConfig,
    MetricReport, ModelFactory, OracleFactory, ReportFormat,
};
use teletail::geostats::{centroid_distance, gridbox_area, load_gridboxes, GridBox};
use teletail::io::write_atomic;
use teletail::rng::derive_seed;
use teletail::synth::{equicorrelation, sample_bivariate_t, sample_gaussian_copula, TParams};
use teletail::train::save_loss_trace;

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::{DataScale, ExperimentConfig, ReportSource, SynthSpec};
use crate::error::CliError;

pub const SEED_SYNTH: u64 = 1;
pub const SEED_FIT: u64 = 2;
pub const SEED_SAMPLE: u64 = 3;
pub const SEED_FOLDS: u64 = 4;
pub const SEED_CROSSVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Synth,
    Transform,
    Fit,
    Sample,
    Metrics,
    Crossval,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Transform => "transform",
            Command::Fit => "fit",
            Command::Sample => "sample",
            Command::Metrics => "metrics",
            Command::Crossval => "crossval",
            Command::Report => "report",
        }
    }
}

pub struct Run {
    pub cfg: ExperimentConfig,
    pub config_bytes: Vec<u8>,
    pub workers: usize,
}

impl Run {
    fn seed(&self, tag: u64) -> u64 {
        derive_seed(self.cfg.seed, tag)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    pub fn execute(&self, command: Command) -> Result<Vec<PathBuf>, CliError> {
        let mut outputs = match command {
            Command::Synth => self.synth()?,
            Command::Transform => self.transform()?,
            Command::Fit => self.fit()?,
            Command::Sample => self.sample()?,
            Command::Metrics => self.metrics()?,
            Command::Crossval => self.crossval()?,
            Command::Report => self.report()?,
        };
        let manifest = self.out(&format!("manifest_{}.json", command.name()));
        self.write_manifest(command, &outputs, &manifest)?;
        outputs.push(manifest);
        Ok(outputs)
    }

    fn synth_spec(&self) -> Result<&SynthSpec, CliError> {
        self.cfg
            .data
            .synth
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a [data.synth] section".into()))
    }

    fn synth_copula(&self) -> Result<CopulaMatrix, CliError> {
        Ok(simulate_synth(self.synth_spec()?, None, self.seed(SEED_SYNTH))?)
    }

    fn raw_data(&self) -> Result<PanelMatrix, CliError> {
        match &self.cfg.data.path {
            Some(p) => Ok(load_csv(p)?),
            None => Ok(self.synth_copula()?.to_panel()?),
        }
    }

    /// Training data on the normal-score scale.
    fn normal_data(&self) -> Result<PanelMatrix, CliError> {
        let raw = self.raw_data()?;
        if self.cfg.data.path.is_some() && self.cfg.data.scale == DataScale::Normal {
            let n = raw.n_obs();
            return Ok(PanelMatrix::new(raw.values().to_vec(), n, raw.site_ids().to_vec(), Scale::Normal)?);
        }
        Ok(normal_scores(&pseudo_observations(&raw)?)?)
    }

    fn gridboxes(&self, d: usize) -> Result<Option<Vec<GridBox>>, CliError> {
        let Some(path) = &self.cfg.data.gridboxes else {
            return Ok(None);
        };
        let boxes = load_gridboxes(path)?;
        if boxes.len() != d {
            return Err(CliError::Config(format!(
                "{} gridboxes given for {d} sites in {}",
                boxes.len(),
                path.display()
            )));
        }
        Ok(Some(boxes))
    }

    fn areas(&self, d: usize) -> Result<Option<Vec<f64>>, CliError> {
        match self.gridboxes(d)? {
            Some(b) => Ok(Some(b.iter().map(gridbox_area).collect::<teletail::Result<_>>()?)),
            None => Ok(None),
        }
    }

    fn synth(&self) -> Result<Vec<PathBuf>, CliError> {
        let u = self.synth_copula()?;
        let path = self.out("synth.csv");
        save_csv(&u.to_panel()?, &path)?;
        Ok(vec![path])
    }

    fn transform(&self) -> Result<Vec<PathBuf>, CliError> {
        let raw = self.raw_data()?;
        let u = pseudo_observations(&raw)?;
        let y = normal_scores(&u)?;
        let (pu, py) = (self.out("pseudo_obs.csv"), self.out("normal_scores.csv"));
        save_csv(&u.to_panel()?, &pu)?;
        save_csv(&y, &py)?;
        Ok(vec![pu, py])
    }

    fn fit(&self) -> Result<Vec<PathBuf>, CliError> {
        let y = self.normal_data()?;
        let spec = self
            .cfg
            .model_spec(y.n_site())
            .ok_or_else(|| CliError::Config("the oracle model can only be used with `crossval`".into()))?;
        let seed = self.seed(SEED_FIT);
        let (model, trace) = spec.fit(&y, seed)?;
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            site_ids: y.site_ids().to_vec(),
            train_seed: seed,
            epochs: trace.len(),
            model,
        };
        let (cp, lp) = (self.out("checkpoint.json"), self.out("loss_trace.csv"));
        ck.save(&cp)?;
        save_loss_trace(&trace, &lp)?;
        Ok(vec![cp, lp])
    }

    fn sample(&self) -> Result<Vec<PathBuf>, CliError> {
        let ck = Checkpoint::load(&self.cfg.checkpoint_path())?;
        let n = self.cfg.sample.n.unwrap_or(self.cfg.eval.n_gen);
        let y = ck
            .model
            .sample_normal(n, self.seed(SEED_SAMPLE), self.cfg.sample.marginal_correction)?
            .with_site_ids(ck.site_ids.clone())?;
        let path = self.out("sample.csv");
        save_csv(&y, &path)?;
        Ok(vec![path])
    }

    fn write_reports(&self, reports: &[MetricReport], stem: &str) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::new();
        for r in reports {
            let (c, j) = (self.out(&format!("{stem}_q{}.csv", r.q)), self.out(&format!("{stem}_q{}.json", r.q)));
            emit_report(r, &c, ReportFormat::Csv)?;
            emit_report(r, &j, ReportFormat::Json)?;
            out.extend([c, j]);
        }
        Ok(out)
    }

    fn metrics(&self) -> Result<Vec<PathBuf>, CliError> {
        let data = pseudo_observations(&self.raw_data()?)?;
        let sample_path = self.cfg.sample_path();
        let sample = pseudo_observations(&load_csv(&sample_path)?)?;
        let areas = self.areas(data.n_site())?;
        let id = format!("sample:{}", file_name(&sample_path));
        let reports = self
            .cfg
            .eval
            .quantiles
            .iter()
            .map(|&q| compare_samples(&data, &sample, q, areas.as_deref(), &id))
            .collect::<teletail::Result<Vec<_>>>()?;
        self.write_reports(&reports, "metrics")
    }

    fn crossval(&self) -> Result<Vec<PathBuf>, CliError> {
        let y = self.normal_data()?;
        let plan = kfold_split(y.n_obs(), self.cfg.eval.folds, self.seed(SEED_FOLDS))?;
        let cv = CvConfig {
            quantiles: self.cfg.eval.quantiles.clone(),
            n_gen: self.cfg.eval.n_gen,
            seed: self.seed(SEED_CROSSVAL),
            areas: self.areas(y.n_site())?,
            workers: self.workers,
        };
        let reports = match self.cfg.model_spec(y.n_site()) {
            Some(spec) => cv_run(&y, &spec, &plan, &cv)?,
            None => {
                let spec = self.synth_spec()?.clone();
                let factory = OracleFactory {
                    simulate: move |n, s| simulate_synth(&spec, Some(n), s),
                };
                cv_run(&y, &factory as &dyn ModelFactory, &plan, &cv)?
            }
        };
        self.write_reports(&reports, "crossval")
    }

    fn report(&self) -> Result<Vec<PathBuf>, CliError> {
        let stem = match self.cfg.eval.report_source {
            ReportSource::Crossval => "crossval",
            ReportSource::Metrics => "metrics",
        };
        let mut out = Vec::new();
        for &q in &self.cfg.eval.quantiles {
            let src = self.out(&format!("{stem}_q{q}.csv"));
            let report = read_report(&src, ReportFormat::Csv)?;
            let d = report.site_ids.len();
            let boxes = self
                .gridboxes(d)?
                .ok_or_else(|| CliError::Config("`report` needs data.gridboxes".into()))?;
            let reference = match &self.cfg.eval.reference_site {
                None => 0,
                Some(id) => report
                    .site_ids
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| CliError::Config(format!("reference site '{id}' is not in the report")))?,
            };
            let max = match self.cfg.eval.max_distance_km {
                Some(m) => m,
                None => max_distance(&boxes),
            };
            if !(max > 0.0) {
                return Err(CliError::Config("distance profile needs a positive maximum distance".into()));
            }
            let rows = distance_profile(&report, &boxes, reference, &equal_width_edges(max, self.cfg.eval.profile_bins))?;
            let path = self.out(&format!("profile_{stem}_q{q}.csv"));
            write_atomic(&path, |w| write_profile_csv(&rows, w))?;
            out.push(path);
        }
        Ok(out)
    }

    fn write_manifest(&self, command: Command, outputs: &[PathBuf], path: &Path) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Output {
            file: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            manifest_version: u32,
            command: &'a str,
            tool_version: &'a str,
            library_version: &'a str,
            config_sha256: String,
            config: &'a ExperimentConfig,
            workers: usize,
            seeds: BTreeMap<&'a str, u64>,
            outputs: Vec<Output>,
        }
        let seeds = BTreeMap::from([
            ("base", self.cfg.seed),
            ("synth", self.seed(SEED_SYNTH)),
            ("fit", self.seed(SEED_FIT)),
            ("sample", self.seed(SEED_SAMPLE)),
            ("folds", self.seed(SEED_FOLDS)),
            ("crossval", self.seed(SEED_CROSSVAL)),
        ]);
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(Output {
                    file: p
                        .strip_prefix(&self.cfg.out_dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned(),
                    sha256: sha256_hex(&std::fs::read(p)?),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let m = Manifest {
            manifest_version: 1,
            command: command.name(),
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: teletail::VERSION,
            config_sha256: sha256_hex(&self.config_bytes),
            config: &self.cfg,
            workers: self.workers,
            seeds,
            outputs,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        write_atomic(path, |w| {
            use std::io::Write;
            w.write_all(text.as_bytes())?;
            Ok(())
        })?;
        Ok(())
    }
}

fn simulate_synth(spec: &SynthSpec, n: Option<usize>, seed: u64) -> teletail::Result<CopulaMatrix> {
    match *spec {
        SynthSpec::BivariateT { n: n0, nu, rho } => sample_bivariate_t(n.unwrap_or(n0), TParams::new(nu, rho)?, seed),
        SynthSpec::Gaussian { n: n0, d, rho } => sample_gaussian_copula(n.unwrap_or(n0), &equicorrelation(d, rho), seed),
    }
}

fn max_distance(boxes: &[GridBox]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            m = m.max(centroid_distance(a, b));
        }
    }
    m
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
