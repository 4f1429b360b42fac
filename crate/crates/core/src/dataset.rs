//! Panel data, marginal transforms between the data, uniform and normal
//! scales, fold splitting, and marginal correction of generated samples.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::special::{norm_cdf, norm_quantile};

/// Scale on which a [`PanelMatrix`] lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Raw,
    Normal,
}

/// Row-major `n_obs × n_site` matrix of finite reals with site labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    values: Vec<f64>,
    n_obs: usize,
    site_ids: Vec<String>,
    scale: Scale,
}

/// Same layout as [`PanelMatrix`] but every entry lies strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaMatrix {
    values: Vec<f64>,
    n_obs: usize,
    site_ids: Vec<String>,
}

pub fn default_site_ids(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("s{i}")).collect()
}

fn check_shape(len: usize, n_obs: usize, n_site: usize) -> Result<()> {
    if n_site == 0 {
        return Err(Error::Argument("panel needs at least one site".into()));
    }
    if len != n_obs * n_site {
        return Err(Error::Dimension {
            expected: n_obs * n_site,
            got: len,
        });
    }
    Ok(())
}

impl PanelMatrix {
    pub fn new(values: Vec<f64>, n_obs: usize, site_ids: Vec<String>, scale: Scale) -> Result<Self> {
        check_shape(values.len(), n_obs, site_ids.len())?;
        if n_obs < 2 {
            return Err(Error::InsufficientData(format!(
                "panel needs at least 2 observations, got {n_obs}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry at row {}, column {}",
                pos / site_ids.len(),
                pos % site_ids.len()
            )));
        }
        Ok(Self {
            values,
            n_obs,
            site_ids,
            scale,
        })
    }

    /// Builds a panel from row vectors with default site labels.
    pub fn from_rows(rows: &[Vec<f64>], scale: Scale) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            crate::error::check_dim(d, row.len())?;
            values.extend_from_slice(row);
        }
        Self::new(values, rows.len(), default_site_ids(d), scale)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_site(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.n_site();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_site())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_site() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|row| row[c]).collect()
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.n_site());
        for &r in idx {
            values.extend_from_slice(self.row(r));
        }
        Self::new(values, idx.len(), self.site_ids.clone(), self.scale)
    }

    pub fn with_site_ids(mut self, site_ids: Vec<String>) -> Result<Self> {
        crate::error::check_dim(self.n_site(), site_ids.len())?;
        self.site_ids = site_ids;
        Ok(self)
    }

    /// Elementwise standard normal cdf; requires the normal scale.
    pub fn to_uniform(&self) -> Result<CopulaMatrix> {
        if self.scale != Scale::Normal {
            return Err(Error::Argument(
                "to_uniform expects a normal-scale panel".into(),
            ));
        }
        // Clamp so that |y| > ~8.3 does not round to exactly 0 or 1.
        let values = self
            .values
            .iter()
            .map(|&y| norm_cdf(y).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
            .collect();
        CopulaMatrix::new(values, self.n_obs, self.site_ids.clone())
    }
}

impl CopulaMatrix {
    pub fn new(values: Vec<f64>, n_obs: usize, site_ids: Vec<String>) -> Result<Self> {
        check_shape(values.len(), n_obs, site_ids.len())?;
        if n_obs == 0 {
            return Err(Error::InsufficientData("empty copula matrix".into()));
        }
        if let Some(pos) = values.iter().position(|&u| !(u > 0.0 && u < 1.0)) {
            return Err(Error::Domain(format!(
                "copula entry {} at row {}, column {} is outside (0, 1)",
                values[pos],
                pos / site_ids.len(),
                pos % site_ids.len()
            )));
        }
        Ok(Self {
            values,
            n_obs,
            site_ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            crate::error::check_dim(d, row.len())?;
            values.extend_from_slice(row);
        }
        Self::new(values, rows.len(), default_site_ids(d))
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_site(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.n_site();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_site())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_site() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|row| row[c]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.n_site());
        for &r in idx {
            values.extend_from_slice(self.row(r));
        }
        Self::new(values, idx.len(), self.site_ids.clone())
    }

    /// View the copula sample as a raw panel (for CSV output).
    pub fn to_panel(&self) -> Result<PanelMatrix> {
        PanelMatrix::new(
            self.values.clone(),
            self.n_obs,
            self.site_ids.clone(),
            Scale::Raw,
        )
    }
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Pluggable marginal model: maps a data column to (0, 1).
///
/// The rank transform is the only implementation shipped; parametric
/// marginals with covariates would slot in here.
pub trait MarginalTransform {
    fn to_uniform(&self, column: &[f64]) -> Result<Vec<f64>>;
}

/// Rank-based pseudo-observations `rank / (n + 1)` with average ranks for ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct RankTransform;

impl MarginalTransform for RankTransform {
    fn to_uniform(&self, column: &[f64]) -> Result<Vec<f64>> {
        let first = column[0];
        if column.iter().all(|&v| v == first) {
            return Err(Error::Degenerate("column has all-identical values".into()));
        }
        let denom = column.len() as f64 + 1.0;
        Ok(average_ranks(column).into_iter().map(|r| r / denom).collect())
    }
}

/// Applies a marginal transform column by column.
pub fn to_copula_scale(data: &PanelMatrix, marginal: &dyn MarginalTransform) -> Result<CopulaMatrix> {
    let (n, d) = (data.n_obs(), data.n_site());
    let mut values = vec![0.0; n * d];
    for c in 0..d {
        let u = marginal.to_uniform(&data.column(c)).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("site {}: {msg}", data.site_ids[c])),
            other => other,
        })?;
        for (r, v) in u.into_iter().enumerate() {
            values[r * d + c] = v;
        }
    }
    CopulaMatrix::new(values, n, data.site_ids.clone())
}

/// Columnwise rank transform to pseudo-observations.
pub fn pseudo_observations(data: &PanelMatrix) -> Result<CopulaMatrix> {
    to_copula_scale(data, &RankTransform)
}

/// Elementwise standard normal quantile.
pub fn normal_scores(u: &CopulaMatrix) -> Result<PanelMatrix> {
    let values = u
        .values
        .iter()
        .map(|&p| norm_quantile(p))
        .collect::<Result<Vec<_>>>()?;
    PanelMatrix::new(values, u.n_obs, u.site_ids.clone(), Scale::Normal)
}

/// Per column: own empirical cdf `rank / (n + 1)` followed by the normal
/// quantile. Ranks, and so the copula, are unchanged.
pub fn marginal_correction(samples: &PanelMatrix) -> Result<PanelMatrix> {
    if samples.scale() != Scale::Normal {
        return Err(Error::Argument(
            "marginal correction expects a normal-scale panel".into(),
        ));
    }
    let (n, d) = (samples.n_obs(), samples.n_site());
    let denom = n as f64 + 1.0;
    let mut values = vec![0.0; n * d];
    for c in 0..d {
        let ranks = average_ranks(&samples.column(c));
        for (r, rank) in ranks.into_iter().enumerate() {
            values[r * d + c] = norm_quantile(rank / denom)?;
        }
    }
    PanelMatrix::new(values, n, samples.site_ids.clone(), Scale::Normal)
}

/// Disjoint folds covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Indices of every fold except `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Random assignment of `0..n` to `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "cannot split {n} observations into {k} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(FoldPlan { folds, seed })
}

/// Reads a CSV with a header row of site labels and one numeric row per
/// observation.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PanelMatrix> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<PanelMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let site_ids: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if site_ids.is_empty() || site_ids.iter().all(String::is_empty) {
        return Err(Error::Parse {
            row: 0,
            column: 0,
            message: "empty file or missing header".into(),
        });
    }
    let d = site_ids.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        // header is row 0, so observation i sits on file row i + 1
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != d {
            return Err(Error::Parse {
                row,
                column: rec.len().min(d),
                message: format!("expected {d} fields, found {}", rec.len()),
            });
        }
        for (column, field) in rec.iter().enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: "no observation rows".into(),
        });
    }
    PanelMatrix::new(values, n, site_ids, Scale::Raw)
}

/// Writes the panel in the format read by [`load_csv`]. Values use the
/// shortest representation that round-trips exactly.
pub fn write_csv(data: &PanelMatrix, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(data.site_ids()).map_err(to_io)?;
    let mut buf = Vec::with_capacity(data.n_site());
    for row in data.rows() {
        buf.clear();
        buf.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&buf).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &PanelMatrix, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), |f| write_csv(data, f))
}
