//! Synthetic copula samples with known dependence.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{default_site_ids, CopulaMatrix};
use crate::depstats::TailCorner;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::special::{norm_cdf, t_cdf};

/// Bivariate Student-t parameters (`nu = 1` is the bivariate Cauchy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TParams {
    pub nu: f64,
    pub rho: f64,
}

impl TParams {
    pub fn new(nu: f64, rho: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Domain(format!("degrees of freedom must be positive, got {nu}")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { nu, rho })
    }
}

fn to_open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Bivariate t draws mapped through the t cdf in each margin.
pub fn sample_bivariate_t(n: usize, p: TParams, seed: u64) -> Result<CopulaMatrix> {
    let p = TParams::new(p.nu, p.rho)?;
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    let chi = ChiSquared::new(p.nu).map_err(|e| Error::Domain(e.to_string()))?;
    let c = (1.0 - p.rho * p.rho).sqrt();
    let mut values = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let w = (p.nu / chi.sample(&mut rng)).sqrt();
        values.push(to_open_unit(t_cdf(w * z1, p.nu)));
        values.push(to_open_unit(t_cdf(w * (p.rho * z1 + c * z2), p.nu)));
    }
    CopulaMatrix::new(values, n, default_site_ids(2))
}

/// Limiting tail-dependence coefficient of the bivariate t copula.
pub fn analytic_tail_dep(p: TParams, corner: TailCorner) -> f64 {
    let rho = match corner {
        TailCorner::UU | TailCorner::LL => p.rho,
        TailCorner::UL | TailCorner::LU => -p.rho,
    };
    let arg = -((p.nu + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt();
    2.0 * t_cdf(arg, p.nu + 1.0)
}

/// Validates a correlation matrix and returns its lower Cholesky factor.
pub fn correlation_cholesky(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = corr.nrows();
    if d == 0 || corr.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: corr.ncols(),
        });
    }
    for i in 0..d {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("correlation diagonal entry {i} is {}", corr[(i, i)])));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 || !corr[(i, j)].is_finite() {
                return Err(Error::Domain(format!("correlation matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let chol = corr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("correlation matrix is not positive definite".into()))?;
    let l = chol.l();
    if (0..d).any(|i| l[(i, i)] < 1e-10) {
        return Err(Error::Degenerate("correlation matrix is numerically singular".into()));
    }
    Ok(l)
}

pub fn sample_gaussian_copula(n: usize, corr: &DMatrix<f64>, seed: u64) -> Result<CopulaMatrix> {
    let l = correlation_cholesky(corr)?;
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let d = l.nrows();
    let mut rng = rng_from(seed);
    let mut z = vec![0.0; d];
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let x: f64 = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
            values.push(to_open_unit(norm_cdf(x)));
        }
    }
    CopulaMatrix::new(values, n, default_site_ids(d))
}

/// Equicorrelated matrix with off-diagonal `rho`.
pub fn equicorrelation(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depstats::{spearman_rho, tail_dep_empirical};
    use crate::special::ks_statistic;

    /// Closed-form t cdf with two degrees of freedom.
    fn t2_cdf(x: f64) -> f64 {
        0.5 + x / (2.0 * (2.0 + x * x).sqrt())
    }

    #[test]
    fn cauchy_tail_coefficients() {
        let p = TParams::new(1.0, 0.8).unwrap();
        let oracle = |rho: f64| 2.0 * t2_cdf(-(2.0 * (1.0 - rho) / (1.0 + rho)).sqrt());
        assert!((analytic_tail_dep(p, TailCorner::UU) - oracle(0.8)).abs() < 1e-12);
        assert!((analytic_tail_dep(p, TailCorner::UL) - oracle(-0.8)).abs() < 1e-12);
        assert!((analytic_tail_dep(p, TailCorner::UU) - 0.6838).abs() < 1e-4);
        assert!((analytic_tail_dep(p, TailCorner::UL) - 0.0513).abs() < 1e-4);
        assert_eq!(analytic_tail_dep(p, TailCorner::UU), analytic_tail_dep(p, TailCorner::LL));
        assert_eq!(analytic_tail_dep(p, TailCorner::UL), analytic_tail_dep(p, TailCorner::LU));
    }

    #[test]
    fn near_comonotone_limit() {
        let p = TParams::new(3.0, 1.0 - 1e-12).unwrap();
        assert!((analytic_tail_dep(p, TailCorner::UU) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn parameter_domains() {
        assert!(TParams::new(0.0, 0.5).is_err());
        assert!(TParams::new(1.0, 1.0).is_err());
        assert!(TParams::new(1.0, -1.0).is_err());
        assert!(sample_bivariate_t(0, TParams { nu: 1.0, rho: 0.5 }, 0).is_err());
    }

    #[test]
    fn t_margins_are_uniform() {
        let n = 100_000;
        let u = sample_bivariate_t(n, TParams::new(1.0, 0.8).unwrap(), 1).unwrap();
        for c in 0..2 {
            let ks = ks_statistic(&u.column(c), |x| x.clamp(0.0, 1.0));
            assert!(ks < 2.0 / (n as f64).sqrt(), "ks {ks}");
        }
    }

    #[test]
    fn t_zero_correlation_has_zero_spearman() {
        let u = sample_bivariate_t(1_000_000, TParams::new(1.0, 0.0).unwrap(), 2).unwrap();
        assert!(spearman_rho(&u.column(0), &u.column(1)).unwrap().abs() < 0.01);
    }

    #[test]
    fn cauchy_benchmark_sample_tail_dependence() {
        let u = sample_bivariate_t(3940, TParams::new(1.0, 0.8).unwrap(), 3).unwrap();
        let l = tail_dep_empirical(&u, 0, 1, 0.95, TailCorner::UU).unwrap();
        assert!((l - 0.684).abs() < 0.06, "{l}");
    }

    #[test]
    fn t_is_seeded() {
        let p = TParams::new(2.0, 0.3).unwrap();
        assert_eq!(sample_bivariate_t(50, p, 9).unwrap(), sample_bivariate_t(50, p, 9).unwrap());
    }

    #[test]
    fn identity_gives_uniform_margins() {
        let n = 100_000;
        let u = sample_gaussian_copula(n, &DMatrix::identity(3, 3), 4).unwrap();
        for c in 0..3 {
            assert!(ks_statistic(&u.column(c), |x| x.clamp(0.0, 1.0)) < 2.0 / (n as f64).sqrt());
        }
        assert!(spearman_rho(&u.column(0), &u.column(2)).unwrap().abs() < 0.02);
    }

    #[test]
    fn gaussian_rank_correlation() {
        let u = sample_gaussian_copula(1_000_000, &equicorrelation(2, 0.5), 5).unwrap();
        let expected = 6.0 / std::f64::consts::PI * 0.25f64.asin();
        let got = spearman_rho(&u.column(0), &u.column(1)).unwrap();
        assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
    }

    #[test]
    fn rejects_invalid_correlations() {
        assert!(sample_gaussian_copula(10, &equicorrelation(2, 1.0), 0).is_err());
        assert!(sample_gaussian_copula(10, &equicorrelation(3, -0.7), 0).is_err());
        let mut asym = equicorrelation(2, 0.3);
        asym[(0, 1)] = 0.2;
        assert!(sample_gaussian_copula(10, &asym, 0).is_err());
        assert!(sample_gaussian_copula(10, &DMatrix::from_element(2, 2, 2.0), 0).is_err());
    }
}
