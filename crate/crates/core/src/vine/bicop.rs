//! One-parameter bivariate copula families with rotations.
//!
//! `h1` is the conditional cdf of the first argument given the second,
//! `h2` the conditional cdf of the second given the first.

use serde::{Deserialize, Serialize};

use crate::depstats::kendall_tau;
use crate::error::{check_dim, Error, Result};
use crate::special::{norm_cdf, norm_quantile_unchecked};

/// Arguments and h-function outputs are kept inside `[EDGE_EPS, 1 − EDGE_EPS]`.
pub const EDGE_EPS: f64 = 1e-15;

pub const MIN_PAIRS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
    Frank,
}

impl Family {
    pub fn n_params(self) -> usize {
        usize::from(self != Family::Independence)
    }

    pub fn rotatable(self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel)
    }
}

/// Counter-clockwise rotation in degrees. With base copula `C'`:
/// 90° is the law of `(1 − U, V)`, 180° of `(1 − U, 1 − V)`, 270° of `(U, 1 − V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        match r {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = Error;

    fn try_from(deg: u16) -> Result<Self> {
        match deg {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(Error::Domain(format!("rotation must be 0, 90, 180 or 270, got {deg}"))),
        }
    }
}

impl Rotation {
    fn flips(self) -> (bool, bool) {
        match self {
            Rotation::R0 => (false, false),
            Rotation::R90 => (true, false),
            Rotation::R180 => (true, true),
            Rotation::R270 => (false, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivCopula {
    pub family: Family,
    pub rotation: Rotation,
    pub param: f64,
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    x.clamp(EDGE_EPS, 1.0 - EDGE_EPS)
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {x} is not in (0, 1)")))
    }
}

/// `ln(e^a + e^b − 1)` for `a, b ≥ 0`.
fn log_sum_exp_minus_one(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

/// Base (unrotated) family evaluations. All are written for `(u, v)` with
/// `h(u | v) = ∂C(u, v)/∂v`; every family here is exchangeable, so the
/// other conditional is `h(v | u)`.
mod base {
    use super::*;

    pub fn log_pdf(f: Family, t: f64, u: f64, v: f64) -> f64 {
        match f {
            Family::Independence => 0.0,
            Family::Gaussian => {
                let (x, y) = (norm_quantile_unchecked(u), norm_quantile_unchecked(v));
                let r2 = 1.0 - t * t;
                -0.5 * r2.ln() - (t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * r2)
            }
            Family::Clayton => {
                let (lu, lv) = (u.ln(), v.ln());
                let l = log_sum_exp_minus_one(-t * lu, -t * lv);
                t.ln_1p() - (1.0 + t) * (lu + lv) - (2.0 + 1.0 / t) * l
            }
            Family::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let ls = gumbel_log_s(t, x, y);
                let a = (ls / t).exp();
                -a + x + y + (t - 1.0) * (x.ln() + y.ln()) + (2.0 / t - 2.0) * ls + ((t - 1.0) / a).ln_1p()
            }
            Family::Frank => {
                let (a, b, c) = ((-t * u).exp_m1(), (-t * v).exp_m1(), (-t).exp_m1());
                let den = c + a * b;
                (-t * c).ln() + (1.0 + a).ln() + (1.0 + b).ln() - 2.0 * den.abs().ln()
            }
        }
    }

    fn gumbel_log_s(t: f64, x: f64, y: f64) -> f64 {
        let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
        t * hi.ln() + (lo / hi).powf(t).ln_1p()
    }

    pub fn h(f: Family, t: f64, u: f64, v: f64) -> f64 {
        let out = match f {
            Family::Independence => u,
            Family::Gaussian => {
                let (x, y) = (norm_quantile_unchecked(u), norm_quantile_unchecked(v));
                norm_cdf((x - t * y) / (1.0 - t * t).sqrt())
            }
            Family::Clayton => {
                let (lu, lv) = (u.ln(), v.ln());
                let l = log_sum_exp_minus_one(-t * lu, -t * lv);
                (-(t + 1.0) * lv - (1.0 / t + 1.0) * l).exp()
            }
            Family::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let ls = gumbel_log_s(t, x, y);
                (-(ls / t).exp() + (1.0 / t - 1.0) * ls + (t - 1.0) * y.ln() + y).exp()
            }
            Family::Frank => {
                let (a, b, c) = ((-t * u).exp_m1(), (-t * v).exp_m1(), (-t).exp_m1());
                (b + 1.0) * a / (c + a * b)
            }
        };
        clamp_unit(out)
    }

    pub fn hinv(f: Family, t: f64, p: f64, v: f64) -> f64 {
        let out = match f {
            Family::Independence => p,
            Family::Gaussian => {
                let y = norm_quantile_unchecked(v);
                norm_cdf(norm_quantile_unchecked(p) * (1.0 - t * t).sqrt() + t * y)
            }
            Family::Clayton => {
                let inner = 1.0 + (-t * v.ln()).exp() * (-t / (1.0 + t) * p.ln()).exp_m1();
                (-inner.ln() / t).exp()
            }
            Family::Gumbel => invert_increasing(p, |u| h(f, t, u, v), |u| log_pdf(f, t, u, v).exp()),
            Family::Frank => {
                let (b, c) = ((-t * v).exp_m1(), (-t).exp_m1());
                let a = p * c / (b + 1.0 - p * b);
                -a.ln_1p() / t
            }
        };
        clamp_unit(out)
    }

    /// Solves `g(u) = p` for increasing `g` on (0, 1) by safeguarded Newton.
    fn invert_increasing(p: f64, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut u = p;
        for _ in 0..200 {
            let r = g(u) - p;
            if r.abs() < 1e-15 {
                break;
            }
            if r > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let step = u - r / dg(u);
            u = if step > lo && step < hi && step.is_finite() {
                step
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-16 {
                break;
            }
        }
        u
    }
}

impl BivCopula {
    pub fn new(family: Family, rotation: Rotation, param: f64) -> Result<Self> {
        let ok = match family {
            Family::Independence => true,
            Family::Gaussian => param > -1.0 && param < 1.0,
            Family::Clayton => param > 0.0 && param.is_finite(),
            Family::Gumbel => param >= 1.0 && param.is_finite(),
            Family::Frank => param != 0.0 && param.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!("parameter {param} outside the {family:?} domain")));
        }
        if rotation != Rotation::R0 && !family.rotatable() {
            return Err(Error::Domain(format!("{family:?} copulas are not rotated")));
        }
        let param = if family == Family::Independence { 0.0 } else { param };
        Ok(Self {
            family,
            rotation,
            param,
        })
    }

    pub fn independence() -> Self {
        Self {
            family: Family::Independence,
            rotation: Rotation::R0,
            param: 0.0,
        }
    }

    pub(crate) fn log_pdf_raw(&self, u: f64, v: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        let u = clamp_unit(if fu { 1.0 - u } else { u });
        let v = clamp_unit(if fv { 1.0 - v } else { v });
        base::log_pdf(self.family, self.param, u, v)
    }

    /// `P(U ≤ u | V = v)`.
    pub(crate) fn h1_raw(&self, u: f64, v: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        let bu = clamp_unit(if fu { 1.0 - u } else { u });
        let bv = clamp_unit(if fv { 1.0 - v } else { v });
        let h = base::h(self.family, self.param, bu, bv);
        clamp_unit(if fu { 1.0 - h } else { h })
    }

    /// `P(V ≤ v | U = u)`.
    pub(crate) fn h2_raw(&self, u: f64, v: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        let bu = clamp_unit(if fu { 1.0 - u } else { u });
        let bv = clamp_unit(if fv { 1.0 - v } else { v });
        let h = base::h(self.family, self.param, bv, bu);
        clamp_unit(if fv { 1.0 - h } else { h })
    }

    /// Inverse of `h1` in `u`.
    pub(crate) fn h1_inv_raw(&self, p: f64, v: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        let p = clamp_unit(p);
        let bp = if fu { 1.0 - p } else { p };
        let bv = clamp_unit(if fv { 1.0 - v } else { v });
        let u = base::hinv(self.family, self.param, clamp_unit(bp), bv);
        clamp_unit(if fu { 1.0 - u } else { u })
    }

    /// Inverse of `h2` in `v`.
    pub(crate) fn h2_inv_raw(&self, p: f64, u: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        let p = clamp_unit(p);
        let bp = if fv { 1.0 - p } else { p };
        let bu = clamp_unit(if fu { 1.0 - u } else { u });
        let v = base::hinv(self.family, self.param, clamp_unit(bp), bu);
        clamp_unit(if fv { 1.0 - v } else { v })
    }

    pub fn log_pdf(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        Ok(self.log_pdf_raw(u, v))
    }

    pub fn pdf(&self, u: f64, v: f64) -> Result<f64> {
        self.log_pdf(u, v).map(f64::exp)
    }

    pub fn h1(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        Ok(self.h1_raw(u, v))
    }

    pub fn h2(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        Ok(self.h2_raw(u, v))
    }

    pub fn h1_inv(&self, p: f64, v: f64) -> Result<f64> {
        check_unit("p", p)?;
        check_unit("v", v)?;
        Ok(self.h1_inv_raw(p, v))
    }

    pub fn h2_inv(&self, p: f64, u: f64) -> Result<f64> {
        check_unit("p", p)?;
        check_unit("u", u)?;
        Ok(self.h2_inv_raw(p, u))
    }

    pub fn log_likelihood(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(&a, &b)| self.log_pdf_raw(a, b)).sum()
    }

    /// Kendall's tau implied by the parameter (Frank by quadrature).
    pub fn kendall_tau(&self) -> f64 {
        let t = self.param;
        let base = match self.family {
            Family::Independence => 0.0,
            Family::Gaussian => 2.0 / std::f64::consts::PI * t.asin(),
            Family::Clayton => t / (t + 2.0),
            Family::Gumbel => 1.0 - 1.0 / t,
            Family::Frank => 1.0 - 4.0 / t * (1.0 - debye1(t)),
        };
        match self.rotation {
            Rotation::R90 | Rotation::R270 => -base,
            _ => base,
        }
    }
}

/// `D₁(x) = (1/x) ∫₀ˣ t / (eᵗ − 1) dt` by composite Simpson.
fn debye1(x: f64) -> f64 {
    let n = 2000;
    let h = x / n as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / x
}

/// Result of a single-edge fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicopFit {
    pub copula: BivCopula,
    pub log_likelihood: f64,
    pub aic: f64,
    /// The likelihood search did not improve on the tau-inversion start.
    pub fallback: bool,
}

/// Parameter map from an unconstrained search variable, with search bounds.
fn search_space(family: Family) -> (f64, f64, fn(f64, bool) -> f64) {
    match family {
        Family::Gaussian => (-3.8, 3.8, |s, _| s.tanh()),
        Family::Clayton => (1e-4f64.ln(), 28f64.ln(), |s, _| s.exp()),
        Family::Gumbel => (1e-4f64.ln(), 27f64.ln(), |s, _| 1.0 + s.exp()),
        Family::Frank => (1e-3f64.ln(), 50f64.ln(), |s, neg| if neg { -s.exp() } else { s.exp() }),
        Family::Independence => (0.0, 0.0, |_, _| 0.0),
    }
}

fn tau_inversion(family: Family, tau: f64) -> Option<f64> {
    let a = tau.abs();
    match family {
        Family::Gaussian => Some((std::f64::consts::FRAC_PI_2 * tau).sin()),
        Family::Clayton if a > 0.0 => Some(2.0 * a / (1.0 - a)),
        Family::Gumbel => Some(1.0 / (1.0 - a)),
        _ => None,
    }
}

fn golden_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-8 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn finite_or_neg_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

/// Maximum-likelihood fit of one (family, rotation) with `tau` as the
/// empirical Kendall's tau of the pairs.
pub fn fit_bicop_family(u: &[f64], v: &[f64], family: Family, rotation: Rotation, tau: f64) -> Result<BicopFit> {
    check_dim(u.len(), v.len())?;
    if family == Family::Independence {
        return Ok(BicopFit {
            copula: BivCopula::independence(),
            log_likelihood: 0.0,
            aic: 0.0,
            fallback: false,
        });
    }
    let negative = tau < 0.0;
    let (lo, hi, map) = search_space(family);
    let ll_at = |param: f64| match BivCopula::new(family, rotation, param) {
        Ok(c) => finite_or_neg_inf(c.log_likelihood(u, v)),
        Err(_) => f64::NEG_INFINITY,
    };
    let (s, ll) = golden_max(lo, hi, |s| ll_at(map(s, negative)));
    let mut param = map(s, negative);
    let mut best = ll;
    let mut fallback = false;
    if let Some(start) = tau_inversion(family, tau) {
        let start_ll = ll_at(start);
        if start_ll > best || !best.is_finite() {
            param = start;
            best = start_ll;
            fallback = true;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numeric(format!("{family:?} likelihood is not finite")));
    }
    let copula = BivCopula::new(family, rotation, param)?;
    Ok(BicopFit {
        copula,
        log_likelihood: best,
        aic: -2.0 * best + 2.0 * family.n_params() as f64,
        fallback,
    })
}

/// Candidate (family, rotation) pairs compatible with the sign of `tau`.
pub fn candidates(tau: f64) -> Vec<(Family, Rotation)> {
    let mut out = vec![(Family::Independence, Rotation::R0), (Family::Gaussian, Rotation::R0)];
    let rots = if tau >= 0.0 {
        [Rotation::R0, Rotation::R180]
    } else {
        [Rotation::R90, Rotation::R270]
    };
    for fam in [Family::Clayton, Family::Gumbel] {
        for r in rots {
            out.push((fam, r));
        }
    }
    out.push((Family::Frank, Rotation::R0));
    out
}

/// Fits every candidate family and keeps the one with the smallest AIC.
pub fn fit_bicop(u: &[f64], v: &[f64]) -> Result<BicopFit> {
    check_dim(u.len(), v.len())?;
    if u.len() < MIN_PAIRS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_PAIRS} pairs to fit a copula, got {}",
            u.len()
        )));
    }
    for &x in u.iter().chain(v) {
        check_unit("observation", x)?;
    }
    let tau = kendall_tau(u, v)?;
    if tau.abs() >= 1.0 - 1e-9 {
        return Err(Error::Degenerate(format!("pairs are (counter)monotone (tau = {tau})")));
    }
    let mut best: Option<BicopFit> = None;
    for (family, rotation) in candidates(tau) {
        let fit = match fit_bicop_family(u, v, family, rotation, tau) {
            Ok(f) => f,
            Err(Error::Numeric(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("independence is always a candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::norm_pdf;

    fn all_copulas() -> Vec<BivCopula> {
        let mut out = vec![
            BivCopula::new(Family::Gaussian, Rotation::R0, 0.6).unwrap(),
            BivCopula::new(Family::Gaussian, Rotation::R0, -0.4).unwrap(),
            BivCopula::new(Family::Frank, Rotation::R0, 4.0).unwrap(),
            BivCopula::new(Family::Frank, Rotation::R0, -3.0).unwrap(),
        ];
        for r in [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270] {
            out.push(BivCopula::new(Family::Clayton, r, 1.5).unwrap());
            out.push(BivCopula::new(Family::Gumbel, r, 1.8).unwrap());
        }
        out
    }

    /// Closed-form base cdfs.
    fn base_cdf(f: Family, t: f64, u: f64, v: f64) -> f64 {
        match f {
            Family::Clayton => (u.powf(-t) + v.powf(-t) - 1.0).powf(-1.0 / t),
            Family::Gumbel => (-((-u.ln()).powf(t) + (-v.ln()).powf(t)).powf(1.0 / t)).exp(),
            Family::Frank => {
                -1.0 / t * (1.0 + (-t * u).exp_m1() * (-t * v).exp_m1() / (-t).exp_m1()).ln()
            }
            _ => unreachable!(),
        }
    }

    fn cdf(c: &BivCopula, u: f64, v: f64) -> f64 {
        let b = |a, b| base_cdf(c.family, c.param, a, b);
        match c.rotation {
            Rotation::R0 => b(u, v),
            Rotation::R90 => v - b(1.0 - u, v),
            Rotation::R180 => u + v - 1.0 + b(1.0 - u, 1.0 - v),
            Rotation::R270 => u - b(u, 1.0 - v),
        }
    }

    /// Simpson integral of the density against normal scores over [−8, 8]².
    fn total_mass(c: &BivCopula) -> f64 {
        let n = 400;
        let (a, b) = (-8.0, 8.0);
        let h = (b - a) / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut s = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            for j in 0..=n {
                let y = a + j as f64 * h;
                let (u, v) = (norm_cdf(x), norm_cdf(y));
                if u <= 0.0 || u >= 1.0 || v <= 0.0 || v >= 1.0 {
                    continue;
                }
                s += w(i) * w(j) * c.pdf(u, v).unwrap() * norm_pdf(x) * norm_pdf(y);
            }
        }
        s * h * h / 9.0
    }

    fn grid() -> Vec<(f64, f64)> {
        let mut rng = crate::rng::rng_from(4);
        use rand::Rng;
        (0..100).map(|_| (rng.random_range(0.02..0.98), rng.random_range(0.02..0.98))).collect()
    }

    #[test]
    fn independence_is_flat() {
        let c = BivCopula::independence();
        for (u, v) in grid() {
            assert_eq!(c.pdf(u, v).unwrap(), 1.0);
            assert_eq!(c.h1(u, v).unwrap(), u);
            assert_eq!(c.h2(u, v).unwrap(), v);
        }
    }

    #[test]
    fn zero_correlation_gaussian_is_independence() {
        let c = BivCopula::new(Family::Gaussian, Rotation::R0, 0.0).unwrap();
        for (u, v) in grid() {
            assert!((c.pdf(u, v).unwrap() - 1.0).abs() < 1e-12);
            assert!((c.h1(u, v).unwrap() - u).abs() < 1e-12);
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        for c in all_copulas() {
            let m = total_mass(&c);
            assert!((m - 1.0).abs() < 1e-4, "{c:?}: {m}");
        }
    }

    #[test]
    fn h_matches_cdf_derivative() {
        let eps = 1e-6;
        for c in all_copulas().into_iter().filter(|c| c.family != Family::Gaussian) {
            for (u, v) in grid() {
                let fd1 = (cdf(&c, u, v + eps) - cdf(&c, u, v - eps)) / (2.0 * eps);
                let fd2 = (cdf(&c, u + eps, v) - cdf(&c, u - eps, v)) / (2.0 * eps);
                assert!((c.h1(u, v).unwrap() - fd1).abs() < 1e-6, "{c:?} h1 at {u},{v}");
                assert!((c.h2(u, v).unwrap() - fd2).abs() < 1e-6, "{c:?} h2 at {u},{v}");
            }
        }
    }

    #[test]
    fn gaussian_h_matches_density_integral() {
        let c = BivCopula::new(Family::Gaussian, Rotation::R0, 0.6).unwrap();
        for &(u, v) in grid().iter().take(20) {
            // ∫₀ᵘ c(s, v) ds in normal scores
            let xu = norm_quantile_unchecked(u);
            let n = 2000;
            let a = -9.0;
            let h = (xu - a) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let x = a + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * c.log_pdf_raw(norm_cdf(x), v).exp() * norm_pdf(x);
            }
            assert!((s * h / 3.0 - c.h1(u, v).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn inverses_roundtrip() {
        for c in all_copulas() {
            for (p, v) in grid() {
                let u = c.h1_inv(p, v).unwrap();
                assert!((c.h1(u, v).unwrap() - p).abs() < 1e-9, "{c:?} h1 at {p},{v}");
                let w = c.h2_inv(p, v).unwrap();
                assert!((c.h2(v, w).unwrap() - p).abs() < 1e-9, "{c:?} h2 at {p},{v}");
            }
        }
    }

    #[test]
    fn h_is_increasing_in_first_argument() {
        for c in all_copulas() {
            for v in [0.05, 0.5, 0.95] {
                let mut last = 0.0;
                for i in 1..200 {
                    let u = i as f64 / 200.0;
                    let h = c.h1(u, v).unwrap();
                    assert!(h > last, "{c:?}");
                    last = h;
                }
            }
        }
    }

    #[test]
    fn half_turn_is_reflection() {
        let base = BivCopula::new(Family::Clayton, Rotation::R0, 2.0).unwrap();
        let rot = BivCopula::new(Family::Clayton, Rotation::R180, 2.0).unwrap();
        for (u, v) in grid() {
            assert!((rot.pdf(u, v).unwrap() - base.pdf(1.0 - u, 1.0 - v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_checks() {
        assert!(BivCopula::new(Family::Gaussian, Rotation::R0, 1.0).is_err());
        assert!(BivCopula::new(Family::Clayton, Rotation::R0, 0.0).is_err());
        assert!(BivCopula::new(Family::Gumbel, Rotation::R0, 0.9).is_err());
        assert!(BivCopula::new(Family::Frank, Rotation::R0, 0.0).is_err());
        assert!(BivCopula::new(Family::Frank, Rotation::R90, 2.0).is_err());
        let c = BivCopula::new(Family::Gumbel, Rotation::R0, 2.0).unwrap();
        assert!(c.pdf(0.0, 0.5).is_err());
        assert!(c.h1(0.5, 1.0).is_err());
        assert!(Rotation::try_from(45).is_err());
    }

    #[test]
    fn implied_tau() {
        let g = BivCopula::new(Family::Gumbel, Rotation::R90, 2.0).unwrap();
        assert!((g.kendall_tau() + 0.5).abs() < 1e-12);
        // Frank tau at θ = 5 (tabulated value 0.4567)
        let f = BivCopula::new(Family::Frank, Rotation::R0, 5.0).unwrap();
        assert!((f.kendall_tau() - 0.4567).abs() < 1e-3);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let u: Vec<f64> = (1..=40).map(|i| i as f64 / 41.0).collect();
        assert!(matches!(fit_bicop(&u, &u), Err(Error::Degenerate(_))));
        assert!(matches!(fit_bicop(&u[..10], &u[..10]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn serde_uses_degrees() {
        let c = BivCopula::new(Family::Gumbel, Rotation::R270, 1.5).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"family":"gumbel","rotation":270,"param":1.5}"#);
        assert_eq!(serde_json::from_str::<BivCopula>(&s).unwrap(), c);
    }
}
