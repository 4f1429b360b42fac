//! Cross-validated comparison of dependence models against held-out data.
//!
//! For every fold a model is trained on the remaining rows, `n_gen` draws
//! are simulated, and held-out minus simulated statistics are averaged over
//! folds: Spearman's rho and the four tail-dependence corners per site pair,
//! and the four average-radius-of-exceedance corners per site.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{average_ranks, marginal_correction, CopulaMatrix, FoldPlan, PanelMatrix, Scale};
use crate::depstats::{are_with, pearson, tail_dep_with, TailCorner, Thresholds};
use crate::error::{check_dim, Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::geostats::{centroid_distance, GridBox};
use crate::gmmn::{train_gmmn, GeneratorNet};
use crate::io::write_atomic;
use crate::pca::{basis_logdet_correction, fit_pca, project, PcaBasis};
use crate::rng::derive_seed;
use crate::special::norm_logpdf;
use crate::train::{train, TrainConfig, Trainable};
use crate::vine::{fit_rvine, rvine_loglik, rvine_sample, BivCopula, RVineModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A trained model as far as evaluation is concerned.
pub trait FittedModel: Send + Sync {
    /// `n` draws on the copula scale.
    fn simulate(&self, n: usize, seed: u64) -> Result<CopulaMatrix>;

    /// Log-likelihood of normal-score rows, when the model has a density.
    fn heldout_loglik(&self, test: &PanelMatrix) -> Result<Option<f64>>;
}

pub trait ModelFactory: Sync {
    fn id(&self) -> String;

    fn fit_model(&self, train: &PanelMatrix, seed: u64) -> Result<Box<dyn FittedModel>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    Flow {
        bins: usize,
        layers: usize,
        hidden: usize,
        train: TrainConfig,
    },
    PcaFlow {
        components: usize,
        bins: usize,
        layers: usize,
        hidden: usize,
        train: TrainConfig,
    },
    Gmmn {
        /// Full layer widths, noise dimension first; the last width must be
        /// the data dimension.
        widths: Vec<usize>,
        train: TrainConfig,
    },
    Vine,
}

/// A fitted model with everything needed to simulate and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TrainedModel {
    Flow {
        flow: FlowModel,
        basis: Option<PcaBasis>,
    },
    Gmmn {
        net: GeneratorNet,
    },
    Vine {
        vine: RVineModel,
    },
}

impl ModelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::Flow { .. } => "flow",
            ModelSpec::PcaFlow { .. } => "pca-flow",
            ModelSpec::Gmmn { .. } => "gmmn",
            ModelSpec::Vine => "vine",
        }
    }

    /// Fits the model to normal-score data; returns the model and the loss
    /// trace (empty for the vine).
    pub fn fit(&self, data: &PanelMatrix, seed: u64) -> Result<(TrainedModel, Vec<f64>)> {
        if data.scale() != Scale::Normal {
            return Err(Error::Argument("models are fitted to normal-score data".into()));
        }
        let d = data.n_site();
        let with_seed = |t: &TrainConfig| TrainConfig {
            seed: derive_seed(seed, 0x7A1),
            ..*t
        };
        match self {
            ModelSpec::Flow {
                bins,
                layers,
                hidden,
                train: t,
            } => {
                let cfg = FlowConfig {
                    dim: d,
                    bins: *bins,
                    layers: *layers,
                    hidden: *hidden,
                };
                let mut flow = FlowModel::new(cfg, seed)?;
                let out = train(&mut flow, data, &with_seed(t))?;
                Ok((TrainedModel::Flow { flow, basis: None }, out.loss_trace))
            }
            ModelSpec::PcaFlow {
                components,
                bins,
                layers,
                hidden,
                train: t,
            } => {
                let basis = fit_pca(data, *components)?;
                let coefs = basis.project_panel(data)?;
                let cfg = FlowConfig {
                    dim: *components,
                    bins: *bins,
                    layers: *layers,
                    hidden: *hidden,
                };
                let mut flow = FlowModel::new(cfg, seed)?;
                let out = train(&mut flow, &coefs, &with_seed(t))?;
                Ok((
                    TrainedModel::Flow {
                        flow,
                        basis: Some(basis),
                    },
                    out.loss_trace,
                ))
            }
            ModelSpec::Gmmn { widths, train: t } => {
                if widths.last() != Some(&d) {
                    return Err(Error::Argument(format!(
                        "generator output width must equal the data dimension {d}"
                    )));
                }
                let mut net = GeneratorNet::new(widths.clone(), seed)?;
                let out = train_gmmn(&mut net, data, &with_seed(t))?;
                Ok((TrainedModel::Gmmn { net }, out.loss_trace))
            }
            ModelSpec::Vine => {
                let fit = fit_rvine(&data.to_uniform()?)?;
                Ok((TrainedModel::Vine { vine: fit.model }, Vec::new()))
            }
        }
    }
}

impl ModelFactory for ModelSpec {
    fn id(&self) -> String {
        self.tag().to_string()
    }

    fn fit_model(&self, train: &PanelMatrix, seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(self.fit(train, seed)?.0))
    }
}

impl TrainedModel {
    pub fn tag(&self) -> &'static str {
        match self {
            TrainedModel::Flow { basis: None, .. } => "flow",
            TrainedModel::Flow { basis: Some(_), .. } => "pca-flow",
            TrainedModel::Gmmn { .. } => "gmmn",
            TrainedModel::Vine { .. } => "vine",
        }
    }

    /// Dimension of the data the model describes.
    pub fn dim(&self) -> usize {
        match self {
            TrainedModel::Flow { basis: Some(b), .. } => b.d(),
            TrainedModel::Flow { flow, .. } => flow.dim(),
            TrainedModel::Gmmn { net } => net.out_dim(),
            TrainedModel::Vine { vine } => vine.d(),
        }
    }

    /// Re-checks every invariant of a deserialized model.
    pub fn validated(self) -> Result<Self> {
        match self {
            TrainedModel::Flow { flow, basis } => {
                let flow = FlowModel::from_parts(*flow.config(), flow.permutations().to_vec(), flow.params().to_vec())?;
                let basis = match basis {
                    Some(b) => {
                        let b = PcaBasis::from_parts(b.phi().clone(), b.singular_values().to_vec())?;
                        check_dim(b.ell(), flow.dim())?;
                        Some(b)
                    }
                    None => None,
                };
                Ok(TrainedModel::Flow { flow, basis })
            }
            TrainedModel::Gmmn { net } => Ok(TrainedModel::Gmmn {
                net: GeneratorNet::from_parts(net.widths().to_vec(), net.params().to_vec())?,
            }),
            TrainedModel::Vine { vine } => {
                let copulas = vine
                    .copulas()
                    .iter()
                    .map(|level| {
                        level
                            .iter()
                            .map(|c| BivCopula::new(c.family, c.rotation, c.param))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TrainedModel::Vine {
                    vine: RVineModel::new(vine.structure().clone(), copulas)?,
                })
            }
        }
    }

    /// Draws on the normal-score scale. Models that do not pin down their
    /// marginals (basis reconstruction, generator) are marginally corrected
    /// when `correct` is set.
    pub fn sample_normal(&self, n: usize, seed: u64, correct: bool) -> Result<PanelMatrix> {
        let raw = match self {
            TrainedModel::Flow { flow, basis: None } => return flow.sample(n, seed),
            TrainedModel::Flow { flow, basis: Some(b) } => {
                let coefs = flow.sample(n, seed)?;
                b.reconstruct_panel(&coefs, crate::dataset::default_site_ids(b.d()))?
            }
            TrainedModel::Gmmn { net } => net.sample(n, seed)?,
            TrainedModel::Vine { vine } => {
                return crate::dataset::normal_scores(&rvine_sample(vine, n, seed)?);
            }
        };
        if correct {
            marginal_correction(&raw)
        } else {
            Ok(raw)
        }
    }
}

impl FittedModel for TrainedModel {
    fn simulate(&self, n: usize, seed: u64) -> Result<CopulaMatrix> {
        match self {
            TrainedModel::Vine { vine } => rvine_sample(vine, n, seed),
            _ => self.sample_normal(n, seed, true)?.to_uniform(),
        }
    }

    fn heldout_loglik(&self, test: &PanelMatrix) -> Result<Option<f64>> {
        check_dim(self.dim(), test.n_site())?;
        match self {
            TrainedModel::Flow { flow, basis: None } => flow.log_likelihood(test).map(Some),
            TrainedModel::Flow { flow, basis: Some(b) } => {
                let corr = basis_logdet_correction(b)?;
                let mut total = 0.0;
                for row in test.rows() {
                    total += flow.log_density(&project(b, row)?)? + corr;
                }
                Ok(Some(total))
            }
            TrainedModel::Gmmn { .. } => Ok(None),
            TrainedModel::Vine { vine } => {
                let copula = rvine_loglik(vine, &test.to_uniform()?)?;
                let margins: f64 = test.values().iter().map(|&y| norm_logpdf(y)).sum();
                Ok(Some(copula + margins))
            }
        }
    }
}

/// Simulator that is the data-generating process itself.
pub struct OracleFactory<F> {
    pub simulate: F,
}

struct OracleModel<F> {
    simulate: F,
}

impl<F> FittedModel for OracleModel<F>
where
    F: Fn(usize, u64) -> Result<CopulaMatrix> + Send + Sync + Clone,
{
    fn simulate(&self, n: usize, seed: u64) -> Result<CopulaMatrix> {
        (self.simulate)(n, seed)
    }

    fn heldout_loglik(&self, _test: &PanelMatrix) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<F> ModelFactory for OracleFactory<F>
where
    F: Fn(usize, u64) -> Result<CopulaMatrix> + Send + Sync + Clone + 'static,
{
    fn id(&self) -> String {
        "oracle".into()
    }

    fn fit_model(&self, _train: &PanelMatrix, _seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(OracleModel {
            simulate: self.simulate.clone(),
        }))
    }
}

/// Statistics of one copula sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceStats {
    /// Spearman's rho per pair `(i, j)`, `i < j`, lexicographic.
    pub rho: Vec<f64>,
    /// Tail dependence per pair, corners in [`TailCorner::ALL`] order.
    pub lambda: Vec<[f64; 4]>,
    /// Average radius of exceedance per conditioning site.
    pub alpha: Vec<[f64; 4]>,
}

pub fn site_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect()
}

pub fn dependence_stats(u: &CopulaMatrix, q: f64, areas: &[f64]) -> Result<DependenceStats> {
    let d = u.n_site();
    check_dim(d, areas.len())?;
    let ranks: Vec<Vec<f64>> = (0..d).map(|c| average_ranks(&u.column(c))).collect();
    let th = Thresholds::new(u, q)?;
    let mut rho = Vec::new();
    let mut lambda = Vec::new();
    for (i, j) in site_pairs(d) {
        rho.push(pearson(&ranks[i], &ranks[j]));
        let mut l = [0.0; 4];
        for (k, c) in TailCorner::ALL.iter().enumerate() {
            l[k] = tail_dep_with(u, &th, i, j, q, *c);
        }
        lambda.push(l);
    }
    let mut alpha = Vec::with_capacity(d);
    for j in 0..d {
        let mut a = [0.0; 4];
        for (k, c) in TailCorner::ALL.iter().enumerate() {
            a[k] = are_with(u, &th, areas, j, *c)?;
        }
        alpha.push(a);
    }
    Ok(DependenceStats { rho, lambda, alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
    /// Corners in [`TailCorner::ALL`] order.
    pub lambda: [f64; 4],
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDiff {
    pub site: usize,
    pub alpha: [f64; 4],
    /// Distance to the reference site.
    pub distance_km: Option<f64>,
}

/// Fold-averaged differences, held-out minus simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub model_id: String,
    pub q: f64,
    pub n_gen: usize,
    pub fold_seed: u64,
    pub n_folds: usize,
    pub site_ids: Vec<String>,
    pub pairs: Vec<PairDiff>,
    pub sites: Vec<SiteDiff>,
    /// Held-out log-likelihood per fold (empty for models without density).
    pub fold_loglik: Vec<f64>,
}

impl MetricReport {
    /// Mean held-out log-likelihood over folds.
    pub fn cv_loglik(&self) -> Option<f64> {
        (!self.fold_loglik.is_empty()).then(|| self.fold_loglik.iter().sum::<f64>() / self.fold_loglik.len() as f64)
    }

    /// Fills pair distances and distances of each site to `reference`.
    pub fn attach_distances(&mut self, boxes: &[GridBox], reference: usize) -> Result<()> {
        check_dim(self.site_ids.len(), boxes.len())?;
        if reference >= boxes.len() {
            return Err(Error::Argument(format!("reference site {reference} out of range")));
        }
        for p in &mut self.pairs {
            p.distance_km = Some(centroid_distance(&boxes[p.i], &boxes[p.j]));
        }
        for s in &mut self.sites {
            s.distance_km = Some(centroid_distance(&boxes[s.site], &boxes[reference]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    /// Quantile levels; one report is produced per level from the same
    /// fitted fold models.
    pub quantiles: Vec<f64>,
    pub n_gen: usize,
    pub seed: u64,
    /// Gridbox areas for the radius of exceedance; unit areas when absent.
    pub areas: Option<Vec<f64>>,
    pub workers: usize,
}

impl CvConfig {
    pub fn new(q: f64, n_gen: usize, seed: u64) -> Self {
        Self {
            quantiles: vec![q],
            n_gen,
            seed,
            areas: None,
            workers: 1,
        }
    }
}

struct FoldResult {
    /// One entry per quantile level.
    diff: Vec<DependenceStats>,
    loglik: Option<f64>,
}

fn subtract(a: &DependenceStats, b: &DependenceStats) -> DependenceStats {
    DependenceStats {
        rho: a.rho.iter().zip(&b.rho).map(|(x, y)| x - y).collect(),
        lambda: a
            .lambda
            .iter()
            .zip(&b.lambda)
            .map(|(x, y)| std::array::from_fn(|k| x[k] - y[k]))
            .collect(),
        alpha: a
            .alpha
            .iter()
            .zip(&b.alpha)
            .map(|(x, y)| std::array::from_fn(|k| x[k] - y[k]))
            .collect(),
    }
}

fn run_fold(
    data: &PanelMatrix,
    factory: &dyn ModelFactory,
    plan: &FoldPlan,
    cfg: &CvConfig,
    areas: &[f64],
    k: usize,
) -> Result<FoldResult> {
    let test = data.select_rows(&plan.folds[k])?;
    let train_rows = data.select_rows(&plan.complement(k))?;
    let model = factory.fit_model(&train_rows, derive_seed(cfg.seed, 2 * k as u64))?;
    let sim = model.simulate(cfg.n_gen, derive_seed(cfg.seed, 2 * k as u64 + 1))?;
    check_dim(data.n_site(), sim.n_site())?;
    let held = test.to_uniform()?;
    let mut diff = Vec::with_capacity(cfg.quantiles.len());
    for &q in &cfg.quantiles {
        diff.push(subtract(&dependence_stats(&held, q, areas)?, &dependence_stats(&sim, q, areas)?));
    }
    Ok(FoldResult {
        diff,
        loglik: model.heldout_loglik(&test)?,
    })
}

/// k-fold cross-validation of one model on normal-score data; returns one
/// report per quantile level in `cfg.quantiles`.
pub fn cv_run(data: &PanelMatrix, factory: &dyn ModelFactory, plan: &FoldPlan, cfg: &CvConfig) -> Result<Vec<MetricReport>> {
    if data.scale() != Scale::Normal {
        return Err(Error::Argument("cross-validation expects normal-score data".into()));
    }
    if plan.k() < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    check_dim(data.n_obs(), plan.n())?;
    if cfg.quantiles.is_empty() {
        return Err(Error::Argument("at least one quantile level is required".into()));
    }
    let d = data.n_site();
    let areas = cfg.areas.clone().unwrap_or_else(|| vec![1.0; d]);
    check_dim(d, areas.len())?;
    let k = plan.k();
    let workers = cfg.workers.clamp(1, k);
    let mut results: Vec<Option<Result<FoldResult>>> = (0..k).map(|_| None).collect();
    if workers == 1 {
        for (f, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_fold(data, factory, plan, cfg, &areas, f));
        }
    } else {
        std::thread::scope(|s| {
            let chunks: Vec<Vec<usize>> = (0..workers).map(|w| (w..k).step_by(workers).collect()).collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|folds| {
                    let areas = &areas;
                    s.spawn(move || {
                        folds
                            .into_iter()
                            .map(|f| (f, run_fold(data, factory, plan, cfg, areas, f)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (f, r) in h.join().expect("fold worker panicked") {
                    results[f] = Some(r);
                }
            }
        });
    }
    let folds: Vec<FoldResult> = results
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<_>>()?;
    let kf = k as f64;
    let fold_loglik: Vec<f64> = if folds.iter().all(|f| f.loglik.is_some()) {
        folds.iter().map(|f| f.loglik.unwrap()).collect()
    } else {
        Vec::new()
    };
    let mut reports = Vec::with_capacity(cfg.quantiles.len());
    for (qi, &q) in cfg.quantiles.iter().enumerate() {
        let pairs = site_pairs(d)
            .into_iter()
            .enumerate()
            .map(|(p, (i, j))| PairDiff {
                i,
                j,
                rho: folds.iter().map(|f| f.diff[qi].rho[p]).sum::<f64>() / kf,
                lambda: std::array::from_fn(|c| folds.iter().map(|f| f.diff[qi].lambda[p][c]).sum::<f64>() / kf),
                distance_km: None,
            })
            .collect();
        let sites = (0..d)
            .map(|s| SiteDiff {
                site: s,
                alpha: std::array::from_fn(|c| folds.iter().map(|f| f.diff[qi].alpha[s][c]).sum::<f64>() / kf),
                distance_km: None,
            })
            .collect();
        reports.push(MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model_id: factory.id(),
            q,
            n_gen: cfg.n_gen,
            fold_seed: plan.seed,
            n_folds: k,
            site_ids: data.site_ids().to_vec(),
            pairs,
            sites,
            fold_loglik: fold_loglik.clone(),
        });
    }
    Ok(reports)
}

/// Single comparison of a data sample against a model sample.
pub fn compare_samples(data: &CopulaMatrix, sample: &CopulaMatrix, q: f64, areas: Option<&[f64]>, model_id: &str) -> Result<MetricReport> {
    check_dim(data.n_site(), sample.n_site())?;
    let d = data.n_site();
    let unit = vec![1.0; d];
    let areas = areas.unwrap_or(&unit);
    let diff = subtract(&dependence_stats(data, q, areas)?, &dependence_stats(sample, q, areas)?);
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model_id: model_id.to_string(),
        q,
        n_gen: sample.n_obs(),
        fold_seed: 0,
        n_folds: 1,
        site_ids: data.site_ids().to_vec(),
        pairs: site_pairs(d)
            .into_iter()
            .enumerate()
            .map(|(p, (i, j))| PairDiff {
                i,
                j,
                rho: diff.rho[p],
                lambda: diff.lambda[p],
                distance_km: None,
            })
            .collect(),
        sites: (0..d)
            .map(|s| SiteDiff {
                site: s,
                alpha: diff.alpha[s],
                distance_km: None,
            })
            .collect(),
        fold_loglik: Vec::new(),
    })
}

/// One bin of a distance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub metric: String,
    pub corner: Option<TailCorner>,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mean: f64,
    pub count: usize,
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if x < edges[0] || x > edges[last] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x).saturating_sub(1).min(last - 1))
}

/// `n` equal-width bin edges on `[0, max]`.
pub fn equal_width_edges(max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| max * k as f64 / n as f64).collect()
}

/// Bins pair statistics by centroid distance and site statistics by
/// distance to `reference`. Bins are `[e_k, e_{k+1})`, the last one closed;
/// empty bins are omitted.
pub fn distance_profile(report: &MetricReport, boxes: &[GridBox], reference: usize, edges: &[f64]) -> Result<Vec<ProfileRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("bin edges must be strictly increasing with at least two entries".into()));
    }
    let mut r = report.clone();
    r.attach_distances(boxes, reference)?;
    let nb = edges.len() - 1;
    let mut series: Vec<(String, Option<TailCorner>, Vec<(f64, f64)>)> = Vec::new();
    series.push(("rho".into(), None, r.pairs.iter().map(|p| (p.distance_km.unwrap(), p.rho)).collect()));
    for (c, corner) in TailCorner::ALL.iter().enumerate() {
        series.push((
            "lambda".into(),
            Some(*corner),
            r.pairs.iter().map(|p| (p.distance_km.unwrap(), p.lambda[c])).collect(),
        ));
    }
    for (c, corner) in TailCorner::ALL.iter().enumerate() {
        series.push((
            "alpha".into(),
            Some(*corner),
            r.sites.iter().map(|s| (s.distance_km.unwrap(), s.alpha[c])).collect(),
        ));
    }
    let mut out = Vec::new();
    for (metric, corner, values) in series {
        let mut sums = vec![0.0; nb];
        let mut counts = vec![0usize; nb];
        for (dist, v) in values {
            if let Some(b) = bin_of(edges, dist) {
                sums[b] += v;
                counts[b] += 1;
            }
        }
        for b in 0..nb {
            if counts[b] > 0 {
                out.push(ProfileRow {
                    metric: metric.clone(),
                    corner,
                    bin_lo: edges[b],
                    bin_hi: edges[b + 1],
                    mean: sums[b] / counts[b] as f64,
                    count: counts[b],
                });
            }
        }
    }
    Ok(out)
}

pub fn write_profile_csv(rows: &[ProfileRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "corner", "bin_lo_km", "bin_hi_km", "mean_diff", "count"])
        .map_err(csv_err)?;
    for r in rows {
        wr.write_record([
            r.metric.clone(),
            r.corner.map(|c| c.to_string()).unwrap_or_default(),
            format!("{:?}", r.bin_lo),
            format!("{:?}", r.bin_hi),
            format!("{:?}", r.mean),
            r.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            _ => Err(Error::Argument(format!("cannot infer report format from {}", path.display()))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// CSV layout: `metric,corner,i,j,mean_diff,n_folds,distance_km`, with
/// `meta` rows carrying report metadata in `mean_diff` and `loglik` rows
/// carrying per-fold log-likelihoods (fold index in `i`).
pub fn write_report_csv(report: &MetricReport, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "corner", "i", "j", "mean_diff", "n_folds", "distance_km"])
        .map_err(csv_err)?;
    let meta = [
        ("schema_version", report.schema_version.to_string()),
        ("model_id", report.model_id.clone()),
        ("q", format!("{:?}", report.q)),
        ("n_gen", report.n_gen.to_string()),
        ("fold_seed", report.fold_seed.to_string()),
        ("site_ids", serde_json::to_string(&report.site_ids)?),
    ];
    let nf = report.n_folds.to_string();
    for (k, v) in meta {
        wr.write_record(["meta", k, "", "", &v, &nf, ""]).map_err(csv_err)?;
    }
    for p in &report.pairs {
        let (i, j, dist) = (p.i.to_string(), p.j.to_string(), opt_f64(p.distance_km));
        wr.write_record(["rho", "", &i, &j, &format!("{:?}", p.rho), &nf, &dist])
            .map_err(csv_err)?;
        for (c, corner) in TailCorner::ALL.iter().enumerate() {
            wr.write_record(["lambda", corner.as_str(), &i, &j, &format!("{:?}", p.lambda[c]), &nf, &dist])
                .map_err(csv_err)?;
        }
    }
    for s in &report.sites {
        let (i, dist) = (s.site.to_string(), opt_f64(s.distance_km));
        for (c, corner) in TailCorner::ALL.iter().enumerate() {
            wr.write_record(["alpha", corner.as_str(), &i, "", &format!("{:?}", s.alpha[c]), &nf, &dist])
                .map_err(csv_err)?;
        }
    }
    for (k, l) in report.fold_loglik.iter().enumerate() {
        wr.write_record(["loglik", "", &k.to_string(), "", &format!("{l:?}"), "1", ""])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("invalid {what} '{s}' in report")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, "distance").map(Some)
    }
}

pub fn read_report_csv(r: impl std::io::Read) -> Result<MetricReport> {
    let mut rd = csv::Reader::from_reader(r);
    let mut report = MetricReport {
        schema_version: 0,
        model_id: String::new(),
        q: f64::NAN,
        n_gen: 0,
        fold_seed: 0,
        n_folds: 0,
        site_ids: Vec::new(),
        pairs: Vec::new(),
        sites: Vec::new(),
        fold_loglik: Vec::new(),
    };
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 7 {
            return Err(Error::Format(format!("report row has {} fields, expected 7", rec.len())));
        }
        let (metric, corner, i, j, value, nf, dist) = (&rec[0], &rec[1], &rec[2], &rec[3], &rec[4], &rec[5], &rec[6]);
        match metric {
            "meta" => {
                report.n_folds = parse(nf, "fold count")?;
                match corner {
                    "schema_version" => report.schema_version = parse(value, "schema version")?,
                    "model_id" => report.model_id = value.to_string(),
                    "q" => report.q = parse(value, "q")?,
                    "n_gen" => report.n_gen = parse(value, "n_gen")?,
                    "fold_seed" => report.fold_seed = parse(value, "fold seed")?,
                    "site_ids" => report.site_ids = serde_json::from_str(value)?,
                    other => return Err(Error::Format(format!("unknown report metadata '{other}'"))),
                }
            }
            "rho" => report.pairs.push(PairDiff {
                i: parse(i, "site")?,
                j: parse(j, "site")?,
                rho: parse(value, "value")?,
                lambda: [f64::NAN; 4],
                distance_km: parse_opt(dist)?,
            }),
            "lambda" => {
                let c = TailCorner::parse(corner)?;
                let (pi, pj): (usize, usize) = (parse(i, "site")?, parse(j, "site")?);
                let pair = report
                    .pairs
                    .iter_mut()
                    .find(|p| p.i == pi && p.j == pj)
                    .ok_or_else(|| Error::Format(format!("lambda row for unknown pair ({pi}, {pj})")))?;
                pair.lambda[corner_index(c)] = parse(value, "value")?;
            }
            "alpha" => {
                let c = TailCorner::parse(corner)?;
                let site: usize = parse(i, "site")?;
                if report.sites.last().is_none_or(|s| s.site != site) {
                    report.sites.push(SiteDiff {
                        site,
                        alpha: [f64::NAN; 4],
                        distance_km: parse_opt(dist)?,
                    });
                }
                report.sites.last_mut().unwrap().alpha[corner_index(c)] = parse(value, "value")?;
            }
            "loglik" => report.fold_loglik.push(parse(value, "log-likelihood")?),
            other => return Err(Error::Format(format!("unknown report metric '{other}'"))),
        }
    }
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported report schema version {}",
            report.schema_version
        )));
    }
    Ok(report)
}

fn corner_index(c: TailCorner) -> usize {
    TailCorner::ALL.iter().position(|&x| x == c).expect("corner listed")
}

pub fn emit_report(report: &MetricReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    write_atomic(path.as_ref(), |w| match format {
        ReportFormat::Csv => write_report_csv(report, w),
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *w, report)?;
            writeln!(w)?;
            Ok(())
        }
    })
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<MetricReport> {
    let file = std::fs::File::open(path)?;
    match format {
        ReportFormat::Csv => read_report_csv(file),
        ReportFormat::Json => {
            let r: MetricReport = serde_json::from_reader(std::io::BufReader::new(file))?;
            if r.schema_version != REPORT_SCHEMA_VERSION {
                return Err(Error::Format(format!("unsupported report schema version {}", r.schema_version)));
            }
            Ok(r)
        }
    }
}
