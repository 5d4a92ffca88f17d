//! Pearson correlation with a two-sided t-test, and least-squares fits with a
//! 95% confidence band for the mean response.
//!
//! Student-t probabilities go through the regularized incomplete beta function,
//! evaluated by a modified-Lentz continued fraction. The fraction is iterated
//! until successive factors differ from 1 by less than 1e-15, which keeps the
//! CDF accurate to roughly 1e-13 for the degrees of freedom used here.

use serde::Serialize;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t for probability `p` in (0, 1), by bisection.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub r: f64,
    /// Two-sided p-value for zero correlation.
    pub p: f64,
    pub n: usize,
}

struct Moments {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments> {
    if x.len() != y.len() {
        return Err(Error::Alignment { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::CorrelationUndefined("non-finite sample".into()));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Ok(Moments { n, mean_x, mean_y, sxx, syy, sxy })
}

/// Two-sided p-value for a sample correlation `r` over `n` points.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let r2 = r * r;
    if r2 >= 1.0 {
        return 0.0;
    }
    let t2 = r2 * df / (1.0 - r2);
    incomplete_beta(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let m = moments(x, y)?;
    if m.sxx <= 0.0 || m.syy <= 0.0 {
        return Err(Error::CorrelationUndefined("zero variance".into()));
    }
    let r = (m.sxy / (m.sxx.sqrt() * m.syy.sqrt())).clamp(-1.0, 1.0);
    Ok(CorrelationResult { r, p: correlation_p_value(r, m.n), n: m.n })
}

/// Least-squares line with the parameters of its 95% mean-response band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_std_error: f64,
    pub mean_x: f64,
    pub sxx: f64,
    pub n: usize,
    /// `t_{0.975, n-2}`.
    pub t_crit: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    pub fn ci95_half_width(&self, x: f64) -> f64 {
        let dx = x - self.mean_x;
        self.t_crit * self.residual_std_error * (1.0 / self.n as f64 + dx * dx / self.sxx).sqrt()
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let m = moments(x, y)?;
    if m.sxx <= 0.0 {
        return Err(Error::CorrelationUndefined("zero variance in x".into()));
    }
    let slope = m.sxy / m.sxx;
    let intercept = m.mean_y - slope * m.mean_x;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let df = (m.n - 2) as f64;
    Ok(LinearFit {
        slope,
        intercept,
        residual_std_error: (sse / df).sqrt(),
        mean_x: m.mean_x,
        sxx: m.sxx,
        n: m.n,
        t_crit: student_t_quantile(0.975, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r.r - 1.0).abs() < 1e-15);
        assert!(r.p < 1e-6);

        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.r - 0.8).abs() < 1e-12);
        // t = 0.8 * sqrt(2 / 0.36) = 1.8856, df = 2
        assert!(r.p > 0.1 && r.p < 0.3, "{}", r.p);

        let r = pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((r.r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::TooFewPoints(2)));
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::CorrelationUndefined(_))));
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(Error::CorrelationUndefined(_))));
    }

    #[test]
    fn known_t_values() {
        // classic table values
        assert!((student_t_quantile(0.975, 1.0) - 12.706_204_736).abs() < 1e-6);
        assert!((student_t_quantile(0.975, 10.0) - 2.228_138_852).abs() < 1e-8);
        assert!((student_t_cdf(0.0, 3.0) - 0.5).abs() < 1e-15);
        // Cauchy closed form
        for t in [-3.0, -0.5, 0.7, 4.0] {
            let exact = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn linear_fit_examples() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!(f.residual_std_error < 1e-14);

        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((f.slope - 0.8).abs() < 1e-14);
        assert!((f.intercept - 0.5).abs() < 1e-14);
    }

    #[test]
    fn band_is_narrowest_at_mean() {
        let f = linear_fit(&[-2.0, -1.0, 0.0, 1.0, 2.0], &[0.3, -0.1, 0.4, 0.2, 0.9]).unwrap();
        let at_mean = f.ci95_half_width(f.mean_x);
        for dx in [0.01, 0.5, 1.0, 3.0] {
            assert!(f.ci95_half_width(f.mean_x + dx) > at_mean);
            assert!(f.ci95_half_width(f.mean_x - dx) > at_mean);
        }
    }

    #[test]
    fn p_decreases_with_n() {
        for r in [0.1, 0.3, 0.5, 0.8, 0.95] {
            let mut prev = 1.0;
            for n in 3..200 {
                let p = correlation_p_value(r, n);
                assert!(p < prev, "r={r} n={n}");
                prev = p;
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..30),
            noise in proptest::collection::vec(-5.0f64..5.0, 30),
            a in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
            c in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
            b in -5.0f64..5.0,
            d in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.5 * x + e).collect();
            let base = match pearson(&xs, &ys) { Ok(r) => r, Err(_) => return Ok(()) };
            let xt: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
            let yt: Vec<f64> = ys.iter().map(|v| c * v + d).collect();
            let moved = pearson(&xt, &yt).unwrap();
            let sign = (a * c).signum();
            prop_assert!((moved.r - sign * base.r).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&moved.p));
        }
    }
}
