//! Monotone rational-quadratic spline on [0, 1].
//!
//! Raw parameters per coordinate are `K` width logits, `K` height logits
//! and `K − 1` interior derivative pre-activations. Widths and heights go
//! through a softmax with a `MIN_BIN` floor; derivatives through a softplus
//! shifted so that a raw value of 0 gives slope 1. Boundary slopes are 1,
//! so all-zero raw parameters give the identity map.

use crate::error::{Error, Result};

pub const MIN_BIN: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Number of raw parameters for a spline with `k` bins.
pub const fn raw_len(k: usize) -> usize {
    3 * k - 1
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Shift making `MIN_DERIVATIVE + softplus(0 + shift) = 1`.
fn derivative_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

fn softmax_into(raw: &[f64], out: &mut [f64]) {
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &r) in out.iter_mut().zip(raw) {
        *o = (r - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Post-activation spline knots for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineKnots {
    /// Softmax probabilities behind the widths (kept for the backward pass).
    pw: Vec<f64>,
    ph: Vec<f64>,
    /// Knot abscissae / ordinates, `K + 1` each, first 0 and last exactly 1.
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Slopes at all `K + 1` knots; the two boundary slopes are 1.
    derivs: Vec<f64>,
    /// Sigmoid of the shifted derivative pre-activations (softplus slope).
    dslope: Vec<f64>,
}

/// Intermediate quantities at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct SplinePoint {
    pub bin: usize,
    pub xi: f64,
    pub y: f64,
    pub dlog: f64,
}

impl SplineKnots {
    /// Builds knots from `3K − 1` raw parameters.
    pub fn from_raw(raw: &[f64], k: usize) -> Self {
        let mut knots = Self {
            pw: vec![0.0; k],
            ph: vec![0.0; k],
            xs: vec![0.0; k + 1],
            ys: vec![0.0; k + 1],
            derivs: vec![1.0; k + 1],
            dslope: vec![0.0; k.saturating_sub(1)],
        };
        knots.set_raw(raw);
        knots
    }

    /// Re-fills the knots in place from raw parameters of the same `K`.
    pub fn set_raw(&mut self, raw: &[f64]) {
        let k = self.bins();
        debug_assert_eq!(raw.len(), raw_len(k));
        softmax_into(&raw[..k], &mut self.pw);
        softmax_into(&raw[k..2 * k], &mut self.ph);
        let scale = 1.0 - MIN_BIN * k as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for b in 0..k {
            cx += MIN_BIN + scale * self.pw[b];
            cy += MIN_BIN + scale * self.ph[b];
            self.xs[b + 1] = cx;
            self.ys[b + 1] = cy;
        }
        self.xs[k] = 1.0;
        self.ys[k] = 1.0;
        let shift = derivative_shift();
        for b in 0..k - 1 {
            let a = raw[2 * k + b] + shift;
            self.derivs[b + 1] = MIN_DERIVATIVE + softplus(a);
            self.dslope[b] = sigmoid(a);
        }
    }

    /// Knots with explicit widths, heights and interior slopes (for tests
    /// and oracles); widths and heights must each sum to one.
    pub fn from_parts(widths: &[f64], heights: &[f64], interior: &[f64]) -> Result<Self> {
        let k = widths.len();
        if k == 0 || heights.len() != k || interior.len() + 1 != k {
            return Err(Error::Argument("inconsistent spline knot lengths".into()));
        }
        let ok = widths.iter().chain(heights).all(|&w| w >= MIN_BIN)
            && interior.iter().all(|&d| d > 0.0)
            && (widths.iter().sum::<f64>() - 1.0).abs() < 1e-12
            && (heights.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        if !ok {
            return Err(Error::Argument("spline knots violate their invariants".into()));
        }
        let mut xs = vec![0.0; k + 1];
        let mut ys = vec![0.0; k + 1];
        for b in 0..k {
            xs[b + 1] = xs[b] + widths[b];
            ys[b + 1] = ys[b] + heights[b];
        }
        xs[k] = 1.0;
        ys[k] = 1.0;
        let mut derivs = vec![1.0; k + 1];
        derivs[1..k].copy_from_slice(interior);
        Ok(Self {
            pw: vec![],
            ph: vec![],
            xs,
            ys,
            derivs,
            dslope: vec![],
        })
    }

    pub fn bins(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.xs.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.ys.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.derivs
    }

    fn locate(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        let mut b = 0;
        while b + 1 < k && v >= knots[b + 1] {
            b += 1;
        }
        b
    }

    /// Value and log-slope at `x`; `x` must lie in [0, 1].
    pub fn apply(&self, x: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("spline input {x} outside [0, 1]")));
        }
        let p = self.eval(x);
        Ok((p.y, p.dlog))
    }

    pub(crate) fn eval(&self, x: f64) -> SplinePoint {
        let b = Self::locate(&self.xs, x);
        let (xk, wk) = (self.xs[b], self.xs[b + 1] - self.xs[b]);
        let (yk, hk) = (self.ys[b], self.ys[b + 1] - self.ys[b]);
        let (dk, dk1) = (self.derivs[b], self.derivs[b + 1]);
        let s = hk / wk;
        let xi = ((x - xk) / wk).clamp(0.0, 1.0);
        let t = xi * (1.0 - xi);
        let denom = s + (dk1 + dk - 2.0 * s) * t;
        let y = yk + hk * (s * xi * xi + dk * t) / denom;
        let num = s * s * (dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi));
        let dlog = num.ln() - 2.0 * denom.ln();
        SplinePoint {
            bin: b,
            xi,
            y: y.clamp(0.0, 1.0),
            dlog,
        }
    }

    /// Inverse map and its log-slope (minus the forward log-slope at the
    /// preimage).
    pub fn invert(&self, y: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("spline output {y} outside [0, 1]")));
        }
        let x = self.invert_value(y);
        Ok((x, -self.eval(x).dlog))
    }

    pub(crate) fn invert_value(&self, y: f64) -> f64 {
        let b = Self::locate(&self.ys, y);
        let (xk, wk) = (self.xs[b], self.xs[b + 1] - self.xs[b]);
        let (yk, hk) = (self.ys[b], self.ys[b + 1] - self.ys[b]);
        let (dk, dk1) = (self.derivs[b], self.derivs[b + 1]);
        let s = hk / wk;
        let delta = dk1 + dk - 2.0 * s;
        let yr = y - yk;
        let a = hk * (s - dk) + yr * delta;
        let bq = hk * dk - yr * delta;
        let c = -s * yr;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let denom = -bq - disc.sqrt();
        let xi = if denom == 0.0 { 0.0 } else { (2.0 * c / denom).clamp(0.0, 1.0) };
        (xk + xi * wk).clamp(0.0, 1.0)
    }

    /// Reverse-mode sweep at `x`: given upstream gradients of the loss with
    /// respect to the output value (`g_y`) and log-slope (`g_dlog`), adds
    /// the gradient with respect to the raw parameters into `g_raw` and
    /// returns the gradient with respect to `x`.
    ///
    /// Only valid for knots built with [`SplineKnots::from_raw`].
    pub fn backward(&self, x: f64, g_y: f64, g_dlog: f64, g_raw: &mut [f64]) -> f64 {
        let k = self.bins();
        let b = Self::locate(&self.xs, x);
        let (xk, wk) = (self.xs[b], self.xs[b + 1] - self.xs[b]);
        let hk = self.ys[b + 1] - self.ys[b];
        let (dk, dk1) = (self.derivs[b], self.derivs[b + 1]);
        let s = hk / wk;
        let xi = (x - xk) / wk;
        let t = xi * (1.0 - xi);
        let delta = dk1 + dk - 2.0 * s;
        let denom = s + delta * t;
        let numer = hk * (s * xi * xi + dk * t);
        let ratio = numer / denom;
        let slope_num = s * s * (dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi));

        // Partials of numer, denom and slope_num in (xi, s, hk, dk, dk1).
        let dn_dxi = hk * (2.0 * s * xi + dk * (1.0 - 2.0 * xi));
        let dn_ds = hk * xi * xi;
        let dn_dhk = s * xi * xi + dk * t;
        let dn_ddk = hk * t;
        let dd_dxi = delta * (1.0 - 2.0 * xi);
        let dd_ds = 1.0 - 2.0 * t;
        let dd_ddk = t;
        let dd_ddk1 = t;
        let dm_dxi = s * s * (2.0 * dk1 * xi + 2.0 * s * (1.0 - 2.0 * xi) - 2.0 * dk * (1.0 - xi));
        let dm_ds = 2.0 * slope_num / s + s * s * 2.0 * t;
        let dm_ddk = s * s * (1.0 - xi) * (1.0 - xi);
        let dm_ddk1 = s * s * xi * xi;

        // y = yk + numer/denom ; dlog = ln(slope_num) − 2 ln(denom)
        let gy_n = g_y / denom;
        let gy_d = -g_y * ratio / denom - 2.0 * g_dlog / denom;
        let gm = g_dlog / slope_num;

        let g_xi = gy_n * dn_dxi + gy_d * dd_dxi + gm * dm_dxi;
        let g_s = gy_n * dn_ds + gy_d * dd_ds + gm * dm_ds;
        let g_hk = gy_n * dn_dhk + g_s / wk;
        let g_dk = gy_n * dn_ddk + gy_d * dd_ddk + gm * dm_ddk;
        let g_dk1 = gy_d * dd_ddk1 + gm * dm_ddk1;
        let g_yk = g_y;

        // xi = (x − xk)/wk ; s = hk/wk
        let g_x = g_xi / wk;
        let g_xk = -g_xi / wk;
        let g_wk = -g_xi * xi / wk - g_s * s / wk;

        // Knot positions are cumulative sums of the floored softmax widths.
        let scale = 1.0 - MIN_BIN * k as f64;
        let mut g_w = [0.0f64; 64];
        let mut g_h = [0.0f64; 64];
        assert!(k <= 64, "at most 64 spline bins supported");
        g_w[b] += g_wk;
        g_h[b] += g_hk;
        for j in 0..b {
            g_w[j] += g_xk;
            g_h[j] += g_yk;
        }
        softmax_backward(&self.pw, &g_w[..k], scale, &mut g_raw[..k]);
        softmax_backward(&self.ph, &g_h[..k], scale, &mut g_raw[k..2 * k]);

        if b >= 1 {
            g_raw[2 * k + b - 1] += g_dk * self.dslope[b - 1];
        }
        if b + 1 < k {
            g_raw[2 * k + b] += g_dk1 * self.dslope[b];
        }
        g_x
    }
}

/// Adds `scale · J_softmaxᵀ g` into `out`.
fn softmax_backward(p: &[f64], g: &[f64], scale: f64, out: &mut [f64]) {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o += scale * pi * (gi - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_raw(k: usize, rng: &mut crate::rng::Rng, scale: f64) -> Vec<f64> {
        (0..raw_len(k)).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn zero_raw_is_identity() {
        let s = SplineKnots::from_raw(&vec![0.0; raw_len(8)], 8);
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let (y, dl) = s.apply(x).unwrap();
            assert!((y - x).abs() < 1e-15);
            assert!(dl.abs() < 1e-14);
            let (xb, dli) = s.invert(y).unwrap();
            assert!((xb - x).abs() < 1e-15 && dli.abs() < 1e-14);
        }
    }

    #[test]
    fn identity_from_explicit_parts() {
        let w = vec![0.125; 8];
        let s = SplineKnots::from_parts(&w, &w, &[1.0; 7]).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let (y, dl) = s.apply(x).unwrap();
            assert!((y - x).abs() < 1e-15 && dl.abs() < 1e-14);
        }
    }

    #[test]
    fn boundaries_are_fixed() {
        let mut rng = rng_from(1);
        for _ in 0..50 {
            let s = SplineKnots::from_raw(&random_raw(8, &mut rng, 2.0), 8);
            assert_eq!(s.apply(0.0).unwrap().0, 0.0);
            assert_eq!(s.apply(1.0).unwrap().0, 1.0);
        }
    }

    #[test]
    fn knots_satisfy_invariants() {
        let mut rng = rng_from(2);
        for _ in 0..50 {
            let s = SplineKnots::from_raw(&random_raw(6, &mut rng, 5.0), 6);
            for v in [s.widths(), s.heights()] {
                assert!(v.iter().all(|&w| w >= MIN_BIN - 1e-15));
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert!(s.derivatives().iter().all(|&d| d >= MIN_DERIVATIVE));
        }
    }

    #[test]
    fn domain_errors() {
        let s = SplineKnots::from_raw(&vec![0.0; raw_len(4)], 4);
        assert!(s.apply(-1e-9).is_err());
        assert!(s.apply(1.0 + 1e-9).is_err());
        assert!(s.invert(1.5).is_err());
        assert!(s.apply(f64::NAN).is_err());
    }

    #[test]
    fn dlog_matches_finite_difference() {
        let mut rng = rng_from(3);
        for _ in 0..100 {
            let s = SplineKnots::from_raw(&random_raw(8, &mut rng, 1.0), 8);
            let x: f64 = rng.random_range(0.01..0.99);
            let h = 1e-6;
            let fd = (s.apply(x + h).unwrap().0 - s.apply(x - h).unwrap().0) / (2.0 * h);
            let (_, dl) = s.apply(x).unwrap();
            // skip points whose stencil straddles a knot
            if s.eval(x - h).bin != s.eval(x + h).bin {
                continue;
            }
            assert!((dl.exp() - fd).abs() < 1e-6 * fd.max(1.0), "x={x}: {} vs {fd}", dl.exp());
        }
    }

    #[test]
    fn roundtrip_and_inverse_slopes() {
        let mut rng = rng_from(4);
        let mut worst = 0.0f64;
        for i in 0..10_000 {
            let s_raw = random_raw(8, &mut rng, 1.5);
            let s = SplineKnots::from_raw(&s_raw, 8);
            let x: f64 = rng.random();
            let (y, dl) = s.apply(x).unwrap();
            let (xb, dli) = s.invert(y).unwrap();
            worst = worst.max((x - xb).abs());
            if i % 10 == 0 {
                assert!((dl + dli).abs() < 1e-9);
            }
            let (yy, _) = s.apply(s.invert(x).unwrap().0).unwrap();
            worst = worst.max((yy - x).abs());
        }
        assert!(worst < 1e-10, "worst roundtrip error {worst}");
    }

    #[test]
    fn slope_positive_at_random_points() {
        let mut rng = rng_from(5);
        for _ in 0..1000 {
            let s = SplineKnots::from_raw(&random_raw(5, &mut rng, 3.0), 5);
            let (_, dl) = s.apply(rng.random()).unwrap();
            assert!(dl.is_finite() && dl.exp() > 0.0);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from(6);
        let k = 5;
        for _ in 0..200 {
            let raw = random_raw(k, &mut rng, 1.0);
            let x: f64 = rng.random_range(0.0..1.0);
            let (gy, gd) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let f = |raw: &[f64], x: f64| {
                let p = SplineKnots::from_raw(raw, k).eval(x);
                (gy * p.y + gd * p.dlog, p.bin)
            };
            let s = SplineKnots::from_raw(&raw, k);
            let mut g = vec![0.0; raw_len(k)];
            let gx = s.backward(x, gy, gd, &mut g);
            let h = 1e-6;
            let (fp, bp) = f(&raw, x + h);
            let (fm, bm) = f(&raw, x - h);
            if bp == bm {
                let fd = (fp - fm) / (2.0 * h);
                assert!((gx - fd).abs() < 1e-5 * fd.abs().max(1.0), "gx {gx} vs {fd}");
            }
            for p in 0..raw.len() {
                let mut rp = raw.clone();
                rp[p] += h;
                let mut rm = raw.clone();
                rm[p] -= h;
                let (fp, bp) = f(&rp, x);
                let (fm, bm) = f(&rm, x);
                if bp != bm {
                    continue;
                }
                let fd = (fp - fm) / (2.0 * h);
                assert!((g[p] - fd).abs() < 1e-5 * fd.abs().max(1.0), "param {p}: {} vs {fd}", g[p]);
            }
        }
    }
}
