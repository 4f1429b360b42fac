//! Principal-component basis for the basis-expansion flow.
//!
//! Fields are modelled as `y = Φ c` with `Φ` the leading left singular
//! vectors of the `d × n` data matrix (observations as columns, no
//! centering). The flow is fitted to the projected coefficients `Φ† y`, and
//! densities on the site scale pick up the factor `det(ΦᵀΦ)^{-1/2}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{PanelMatrix, Scale};
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_COMPONENTS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    phi: DMatrix<f64>,
    pinv: DMatrix<f64>,
    singular_values: Vec<f64>,
}

/// Serialized form: `phi` stored column-major.
#[derive(Serialize, Deserialize)]
struct PcaBasisRepr {
    d: usize,
    ell: usize,
    phi: Vec<f64>,
    singular_values: Vec<f64>,
}

impl Serialize for PcaBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PcaBasisRepr {
            d: self.phi.nrows(),
            ell: self.phi.ncols(),
            phi: self.phi.as_slice().to_vec(),
            singular_values: self.singular_values.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PcaBasis {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = PcaBasisRepr::deserialize(de)?;
        if r.phi.len() != r.d * r.ell {
            return Err(serde::de::Error::custom("basis array length does not match d × ell"));
        }
        let phi = DMatrix::from_column_slice(r.d, r.ell, &r.phi);
        PcaBasis::from_parts(phi, r.singular_values).map_err(serde::de::Error::custom)
    }
}

impl PcaBasis {
    /// Wraps an arbitrary full-column-rank `d × ℓ` basis. The pseudo-inverse
    /// is `Φᵀ` when the columns are orthonormal and `(ΦᵀΦ)⁻¹Φᵀ` otherwise.
    pub fn from_parts(phi: DMatrix<f64>, singular_values: Vec<f64>) -> Result<Self> {
        if phi.ncols() == 0 || phi.ncols() > phi.nrows() {
            return Err(Error::Argument(format!(
                "basis must have 1 ≤ ℓ ≤ d columns, got {}×{}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        let gram = phi.transpose() * &phi;
        let ell = phi.ncols();
        let orthonormal = (&gram - DMatrix::identity(ell, ell)).amax() < 1e-12;
        let pinv = if orthonormal {
            phi.transpose()
        } else {
            let chol = gram
                .cholesky()
                .ok_or_else(|| Error::Degenerate("basis Gram matrix is singular".into()))?;
            chol.solve(&phi.transpose())
        };
        Ok(Self {
            phi,
            pinv,
            singular_values,
        })
    }

    pub fn d(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ell(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Coefficients for every row of a site-scale panel.
    pub fn project_panel(&self, data: &PanelMatrix) -> Result<PanelMatrix> {
        check_dim(self.d(), data.n_site())?;
        let mut values = Vec::with_capacity(data.n_obs() * self.ell());
        for row in data.rows() {
            values.extend(project(self, row)?);
        }
        PanelMatrix::new(
            values,
            data.n_obs(),
            (1..=self.ell()).map(|k| format!("pc{k}")).collect(),
            data.scale(),
        )
    }

    /// Site-scale fields for every row of a coefficient panel.
    pub fn reconstruct_panel(&self, coefs: &PanelMatrix, site_ids: Vec<String>) -> Result<PanelMatrix> {
        check_dim(self.ell(), coefs.n_site())?;
        check_dim(self.d(), site_ids.len())?;
        let mut values = Vec::with_capacity(coefs.n_obs() * self.d());
        for row in coefs.rows() {
            values.extend(reconstruct(self, row)?);
        }
        PanelMatrix::new(values, coefs.n_obs(), site_ids, coefs.scale())
    }
}

/// Leading `ell` left singular vectors of the `d × n` data matrix.
pub fn fit_pca(data: &PanelMatrix, ell: usize) -> Result<PcaBasis> {
    if data.scale() != Scale::Normal {
        return Err(Error::Argument("PCA expects normal-score data".into()));
    }
    let (n, d) = (data.n_obs(), data.n_site());
    if ell == 0 || ell > d.min(n) {
        return Err(Error::Argument(format!(
            "number of components must be in 1..={}, got {ell}",
            d.min(n)
        )));
    }
    // Row-major n × d values are exactly the column-major layout of d × n.
    let y = DMatrix::from_column_slice(d, n, data.values());
    let svd = y.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numeric("SVD did not return left singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let mut phi = DMatrix::zeros(d, ell);
    for (c, &k) in order.iter().take(ell).enumerate() {
        let mut col = u.column(k).clone_owned();
        // Largest-magnitude entry positive (first one on ties).
        let mut best = 0;
        for i in 1..d {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
        phi.set_column(c, &col);
    }
    PcaBasis::from_parts(phi, singular_values)
}

/// `Φ† y`.
pub fn project(basis: &PcaBasis, y: &[f64]) -> Result<Vec<f64>> {
    check_dim(basis.d(), y.len())?;
    Ok((&basis.pinv * DVector::from_column_slice(y)).as_slice().to_vec())
}

/// `Φ c`.
pub fn reconstruct(basis: &PcaBasis, c: &[f64]) -> Result<Vec<f64>> {
    check_dim(basis.ell(), c.len())?;
    Ok((&basis.phi * DVector::from_column_slice(c)).as_slice().to_vec())
}

/// Fraction of the total sum of squares captured by the first `ell` components.
pub fn explained_variance(basis: &PcaBasis, ell: usize) -> Result<f64> {
    let s = &basis.singular_values;
    if ell > s.len() {
        return Err(Error::Argument(format!(
            "only {} singular values available, asked for {ell}",
            s.len()
        )));
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok(if ell == 0 { 0.0 } else { 1.0 });
    }
    let head: f64 = s[..ell].iter().map(|v| v * v).sum();
    Ok((head / total).clamp(0.0, 1.0))
}

/// `−½ log det(ΦᵀΦ)`: log of the volume factor in the basis density.
pub fn basis_logdet_correction(basis: &PcaBasis) -> Result<f64> {
    logdet_correction_of(&basis.phi)
}

pub fn logdet_correction_of(phi: &DMatrix<f64>) -> Result<f64> {
    let gram = phi.transpose() * phi;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("basis Gram matrix is not positive definite".into()))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * logdet)
}
