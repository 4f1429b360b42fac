//! Empirical dependence statistics on the copula scale: rank correlations,
//! the four bivariate tail-dependence corners and the average radius of
//! exceedance.

use serde::{Deserialize, Serialize};

use crate::dataset::{average_ranks, CopulaMatrix};
use crate::error::{Error, Result};

/// One of the four joint-tail corners. The first letter refers to the first
/// site (`i`), the second to the conditioning site (`j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TailCorner {
    UU,
    LL,
    LU,
    UL,
}

impl TailCorner {
    pub const ALL: [TailCorner; 4] = [TailCorner::UU, TailCorner::LL, TailCorner::LU, TailCorner::UL];

    /// Whether the first site is taken in its upper tail.
    pub fn first_upper(self) -> bool {
        matches!(self, TailCorner::UU | TailCorner::UL)
    }

    /// Whether the conditioning site is taken in its upper tail.
    pub fn second_upper(self) -> bool {
        matches!(self, TailCorner::UU | TailCorner::LU)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TailCorner::UU => "UU",
            TailCorner::LL => "LL",
            TailCorner::LU => "LU",
            TailCorner::UL => "UL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "UU" => Ok(TailCorner::UU),
            "LL" => Ok(TailCorner::LL),
            "LU" => Ok(TailCorner::LU),
            "UL" => Ok(TailCorner::UL),
            _ => Err(Error::Argument(format!("unknown tail corner {s:?}"))),
        }
    }
}

impl std::fmt::Display for TailCorner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    crate::error::check_dim(x.len(), y.len())?;
    if x.len() < min_n {
        return Err(Error::InsufficientData(format!(
            "need at least {min_n} pairs, got {}",
            x.len()
        )));
    }
    for v in [x, y] {
        if v.iter().all(|&a| a == v[0]) {
            return Err(Error::Degenerate("constant vector".into()));
        }
    }
    Ok(())
}

/// Spearman's rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 3)?;
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Kendall's tau-b, computed in O(n log n) with Knight's merge-sort scheme.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let n0 = pairs(n as u64);
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        tied_x += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut m = k + 1;
            while m < j && y[idx[m]] == y[idx[k]] {
                m += 1;
            }
            tied_xy += pairs((m - k) as u64);
            k = m;
        }
        i = j;
    }

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tied_y = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        tied_y += pairs((j - i) as u64);
        i = j;
    }

    let num = n0 as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    let den = ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending and returns the number of inversions (strict).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// `floor(x)` tolerant of products like `(1 - 0.9) * 10 = 0.9999999999999998`.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Per-column exceedance thresholds at quantile level `q`.
///
/// Upper: the ⌊qn⌋-th ascending order statistic, exceeded by `u > t`.
/// Lower: the ⌊(1−q)n⌋-th ascending order statistic, exceeded by `u ≤ t`.
#[derive(Debug, Clone)]
pub struct Thresholds {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl Thresholds {
    pub fn new(u: &CopulaMatrix, q: f64) -> Result<Self> {
        if !(q > 0.5 && q < 1.0) {
            return Err(Error::Argument(format!("quantile level must be in (0.5, 1), got {q}")));
        }
        let n = u.n_obs();
        let k_hi = floor_count(q * n as f64);
        let k_lo = floor_count((1.0 - q) * n as f64);
        if k_lo == 0 || k_hi == 0 {
            return Err(Error::InsufficientData(format!(
                "quantile {q} leaves no tail observations among {n}"
            )));
        }
        let d = u.n_site();
        let mut upper = Vec::with_capacity(d);
        let mut lower = Vec::with_capacity(d);
        let mut col = Vec::with_capacity(n);
        for c in 0..d {
            col.clear();
            col.extend(u.rows().map(|r| r[c]));
            col.sort_by(f64::total_cmp);
            upper.push(col[k_hi - 1]);
            lower.push(col[k_lo - 1]);
        }
        Ok(Self { upper, lower })
    }

    #[inline]
    pub fn exceeds(&self, site: usize, value: f64, upper: bool) -> bool {
        if upper {
            value > self.upper[site]
        } else {
            value <= self.lower[site]
        }
    }
}

fn check_sites(u: &CopulaMatrix, sites: &[usize]) -> Result<()> {
    for &s in sites {
        if s >= u.n_site() {
            return Err(Error::Argument(format!(
                "site index {s} out of range for {} sites",
                u.n_site()
            )));
        }
    }
    Ok(())
}

/// Empirical tail dependence of site `i` on conditioning site `j` at level `q`.
pub fn tail_dep_empirical(u: &CopulaMatrix, i: usize, j: usize, q: f64, corner: TailCorner) -> Result<f64> {
    check_sites(u, &[i, j])?;
    if i == j {
        return Err(Error::Argument("tail dependence needs two distinct sites".into()));
    }
    let th = Thresholds::new(u, q)?;
    Ok(tail_dep_with(u, &th, i, j, q, corner))
}

/// As [`tail_dep_empirical`] with precomputed thresholds.
pub fn tail_dep_with(u: &CopulaMatrix, th: &Thresholds, i: usize, j: usize, q: f64, corner: TailCorner) -> f64 {
    let (fi, fj) = (corner.first_upper(), corner.second_upper());
    let count = u
        .rows()
        .filter(|r| th.exceeds(i, r[i], fi) && th.exceeds(j, r[j], fj))
        .count();
    count as f64 / (u.n_obs() as f64 * (1.0 - q))
}

/// Average radius of exceedance (km when `areas` are km²) conditional on
/// site `j` being in its corner tail. The conditioning site is part of the
/// area sum.
pub fn are_empirical(u: &CopulaMatrix, areas: &[f64], j: usize, q: f64, corner: TailCorner) -> Result<f64> {
    crate::error::check_dim(u.n_site(), areas.len())?;
    check_sites(u, &[j])?;
    let th = Thresholds::new(u, q)?;
    are_with(u, &th, areas, j, corner)
}

pub fn are_with(u: &CopulaMatrix, th: &Thresholds, areas: &[f64], j: usize, corner: TailCorner) -> Result<f64> {
    let (fi, fj) = (corner.first_upper(), corner.second_upper());
    let mut total = 0.0;
    let mut rows = 0usize;
    for r in u.rows().filter(|r| th.exceeds(j, r[j], fj)) {
        let area: f64 = r
            .iter()
            .zip(areas)
            .enumerate()
            .filter(|&(i, (&v, _))| th.exceeds(i, v, fi))
            .map(|(_, (_, &a))| a)
            .sum();
        total += (area / std::f64::consts::PI).sqrt();
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InsufficientData(format!(
            "site {j} has no {corner} conditioning exceedances"
        )));
    }
    Ok(total / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_site_ids;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for a in 0..n {
            for b in a + 1..n {
                let sx = (x[a] - x[b]).signum() * f64::from(x[a] != x[b]);
                let sy = (y[a] - y[b]).signum() * f64::from(y[a] != y[b]);
                if sx == 0.0 {
                    tx += 1;
                }
                if sy == 0.0 {
                    ty += 1;
                }
                if sx * sy > 0.0 {
                    c += 1;
                } else if sx * sy < 0.0 {
                    d += 1;
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        (c - d) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
    }

    fn pairs_matrix(x: &[f64], y: &[f64]) -> CopulaMatrix {
        let v = x.iter().zip(y).flat_map(|(&a, &b)| [a, b]).collect();
        CopulaMatrix::new(v, x.len(), default_site_ids(2)).unwrap()
    }

    #[test]
    fn spearman_extremes() {
        let x = [0.3, 1.2, -4.0, 2.2, 9.0];
        assert!((spearman_rho(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        assert!((spearman_rho(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(spearman_rho(&x, &[1.0; 5]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spearman_independent_large_sample() {
        let mut rng = rng_from(8);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        assert!(spearman_rho(&x, &y).unwrap().abs() < 0.01);
    }

    #[test]
    fn kendall_extremes_and_fixed_sample() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let x = [0.1, 0.5, 0.2, 0.9, 0.4, 0.7];
        let y = [0.3, 0.1, 0.6, 0.8, 0.2, 0.9];
        // 9 concordant, 6 discordant of 15 pairs
        assert!((brute_tau(&x, &y) - 0.2).abs() < 1e-15);
        assert!((kendall_tau(&x, &y).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn tail_dep_comonotone_and_countermonotone() {
        let mut rng = rng_from(1);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(0.001..0.999)).collect();
        let u = pairs_matrix(&x, &x);
        assert!((tail_dep_empirical(&u, 0, 1, 0.95, TailCorner::UU).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        let u = pairs_matrix(&x, &y);
        assert!((tail_dep_empirical(&u, 0, 1, 0.95, TailCorner::UL).unwrap() - 1.0).abs() < 1e-12);
        assert!((tail_dep_empirical(&u, 0, 1, 0.95, TailCorner::LU).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tail_dep_empirical(&u, 0, 1, 0.95, TailCorner::UU).unwrap(), 0.0);
    }

    #[test]
    fn tail_dep_errors() {
        let u = pairs_matrix(&[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]);
        assert!(matches!(
            tail_dep_empirical(&u, 0, 1, 0.9, TailCorner::UU),
            Err(Error::InsufficientData(_))
        ));
        assert!(tail_dep_empirical(&u, 0, 0, 0.6, TailCorner::UU).is_err());
        assert!(tail_dep_empirical(&u, 0, 1, 0.4, TailCorner::UU).is_err());
    }

    #[test]
    fn are_single_site_and_comonotone() {
        let mut rng = rng_from(3);
        let x: Vec<f64> = (0..400).map(|_| rng.random_range(0.001..0.999)).collect();
        let u1 = CopulaMatrix::new(x.clone(), 400, default_site_ids(1)).unwrap();
        let a = 1234.5;
        let got = are_empirical(&u1, &[a], 0, 0.95, TailCorner::UU).unwrap();
        assert!((got - (a / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        let u2 = pairs_matrix(&x, &x);
        let got = are_empirical(&u2, &[a, a], 1, 0.95, TailCorner::UU).unwrap();
        assert!((got - (2.0 * a / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn knight_matches_brute_force(
            xs in prop::collection::vec(0u8..12, 2..80),
            ys in prop::collection::vec(0u8..12, 80),
        ) {
            let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = ys[..x.len()].iter().map(|&v| f64::from(v)).collect();
            prop_assume!(x.iter().any(|&v| v != x[0]) && y.iter().any(|&v| v != y[0]));
            let fast = kendall_tau(&x, &y).unwrap();
            prop_assert!((fast - brute_tau(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn corner_sums_and_symmetry(seed in any::<u64>(), q in 0.6f64..0.97) {
            let mut rng = rng_from(seed);
            let n = 200;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
            let y: Vec<f64> = x.iter().map(|v| (v + rng.random_range(-0.3..0.3)).clamp(0.0005, 0.9995)).collect();
            let u = pairs_matrix(&x, &y);
            let lam = |i, j, c| tail_dep_empirical(&u, i, j, q, c).unwrap();
            let k = floor_count((1.0 - q) * n as f64) as f64;
            let slack = 1.0 + 1.0 / k + 1e-12;
            for c in TailCorner::ALL {
                let v = lam(0, 1, c);
                prop_assert!((0.0..=slack).contains(&v));
            }
            prop_assert!(lam(0, 1, TailCorner::UU) + lam(0, 1, TailCorner::LU) <= slack + 1.0 / k);
            prop_assert!(lam(0, 1, TailCorner::UU) + lam(0, 1, TailCorner::UL) <= slack + 1.0 / k);
            prop_assert_eq!(lam(0, 1, TailCorner::LU), lam(1, 0, TailCorner::UL));
            prop_assert_eq!(lam(0, 1, TailCorner::UU), lam(1, 0, TailCorner::UU));
            prop_assert_eq!(lam(0, 1, TailCorner::LL), lam(1, 0, TailCorner::LL));
        }

        #[test]
        fn monotone_maps_leave_statistics_unchanged(seed in any::<u64>()) {
            let mut rng = rng_from(seed);
            let n = 150;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let y: Vec<f64> = x.iter().map(|v| (0.5 * v + 0.5 * rng.random::<f64>()).clamp(0.001, 0.999)).collect();
            let u = pairs_matrix(&x, &y);
            let xt: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yt: Vec<f64> = y.iter().map(|v| v.sqrt()).collect();
            let ut = pairs_matrix(&xt, &yt);
            let areas = [3.0, 5.0];
            for c in TailCorner::ALL {
                prop_assert_eq!(
                    tail_dep_empirical(&u, 0, 1, 0.9, c).unwrap(),
                    tail_dep_empirical(&ut, 0, 1, 0.9, c).unwrap()
                );
                prop_assert_eq!(
                    are_empirical(&u, &areas, 1, 0.9, c).unwrap(),
                    are_empirical(&ut, &areas, 1, 0.9, c).unwrap()
                );
                let a = are_empirical(&u, &areas, 0, 0.9, c).unwrap();
                prop_assert!(a >= 0.0 && a <= (8.0 / std::f64::consts::PI).sqrt() + 1e-12);
            }
        }
    }
}
