//! Statistics toolkit: log-gamma, regularized incomplete gamma, normal CDF,
//! one-sample Kolmogorov-Smirnov, chi-square tails, compensated summation
//! and sample summaries.
//!
//! Everything here is plain special-function numerics; the simulation code
//! depends on it, never the other way around.

use crate::error::{Error, Result};

/// Lanczos approximation (g = 7, 9 terms); absolute error on `ln Gamma` is
/// far below 1e-12 over the arguments used here.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_ITMAX: usize = 500;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || x < 0.0 {
        return Err(Error::invalid(format!("gamma_p domain: a = {a}, x = {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        Ok(1.0 - gamma_q_cf(a, x)?)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || x < 0.0 {
        return Err(Error::invalid(format!("gamma_q domain: a = {a}, x = {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_p_series(a, x)?)
    } else {
        gamma_q_cf(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> Result<f64> {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..GAMMA_ITMAX {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            return Ok(sum * (-x + a * x.ln() - ln_gamma(a)).exp());
        }
    }
    Err(Error::NumericFailure(format!(
        "incomplete gamma series stalled at a = {a}, x = {x}"
    )))
}

fn gamma_q_cf(a: f64, x: f64) -> Result<f64> {
    let fpmin = f64::MIN_POSITIVE / GAMMA_EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / fpmin;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_ITMAX {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < fpmin {
            d = fpmin;
        }
        c = b + an / c;
        if c.abs() < fpmin {
            c = fpmin;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            return Ok((-x + a * x.ln() - ln_gamma(a)).exp() * h);
        }
    }
    Err(Error::NumericFailure(format!(
        "incomplete gamma continued fraction stalled at a = {a}, x = {x}"
    )))
}

/// Error function through the incomplete gamma route,
/// `erf(x) = sign(x) P(1/2, x^2)`; absolute error well below 1e-10.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = gamma_p(0.5, x * x).unwrap_or(1.0);
    if x > 0.0 {
        p
    } else {
        -p
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// One-sample Kolmogorov-Smirnov statistic `sup_x |ECDF(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("KS statistic needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).ok_or(()).unwrap());
    let n = sorted.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        worst = worst.max(hi.max(lo));
    }
    Ok(worst)
}

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::invalid("chi-square needs matching nonempty arrays"));
    }
    let mut stat = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 {
            return Err(Error::invalid("chi-square expected counts must be positive"));
        }
        stat += (o as f64 - e).powi(2) / e;
    }
    Ok(stat)
}

/// Upper-tail p-value of the chi-square distribution, `Q(dof/2, stat/2)`.
pub fn chi_square_p(stat: f64, dof: f64) -> Result<f64> {
    if dof <= 0.0 {
        return Err(Error::invalid(format!("chi-square dof {dof} <= 0")));
    }
    if stat < 0.0 {
        return Err(Error::invalid(format!("chi-square statistic {stat} < 0")));
    }
    gamma_q(dof / 2.0, stat / 2.0)
}

/// Two-sample chi-square between equally sized histograms, pooling the
/// expectation per cell. Cells where both counts vanish are skipped.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("two-sample chi-square needs matching arrays"));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        if ca == 0 && cb == 0 {
            continue;
        }
        let e = (ca + cb) as f64 / 2.0;
        stat += (ca as f64 - e).powi(2) / e + (cb as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return Err(Error::invalid("two-sample chi-square needs >= 2 occupied cells"));
    }
    let p = chi_square_p(stat, (cells - 1) as f64)?;
    Ok((stat, p))
}

/// Kahan-compensated accumulator; summation order is fixed by the caller,
/// which keeps parallel reductions scheduling-independent.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Sample summary for a replicate ensemble.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StatSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `sqrt(2/M) * variance`, the standard error of the sample variance
    /// under approximate normality.
    pub variance_se: f64,
    /// KS statistic of the samples standardized by the theoretical sigma,
    /// when one was supplied.
    pub ks_against_normal: Option<f64>,
}

impl StatSummary {
    pub fn from_samples(samples: &[f64], theoretical_sigma2: Option<f64>) -> Result<Self> {
        let m = samples.len();
        if m < 2 {
            return Err(Error::invalid(
                "sample variance needs at least two replicates",
            ));
        }
        let mut acc = KahanSum::new();
        for &x in samples {
            acc.add(x);
        }
        let mean = acc.value() / m as f64;
        let mut sq = KahanSum::new();
        for &x in samples {
            sq.add((x - mean) * (x - mean));
        }
        let variance = sq.value() / (m as f64 - 1.0);
        let variance_se = (2.0 / m as f64).sqrt() * variance;
        let ks_against_normal = match theoretical_sigma2 {
            Some(s2) if s2 > 0.0 => {
                let sigma = s2.sqrt();
                let standardized: Vec<f64> = samples.iter().map(|x| x / sigma).collect();
                Some(ks_statistic(&standardized, normal_cdf)?)
            }
            _ => None,
        };
        Ok(StatSummary {
            count: m,
            mean,
            variance,
            variance_se,
            ks_against_normal,
        })
    }

    /// Standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Empirical quantile with linear interpolation on the sorted sample.
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("quantile of empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0,1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Least-squares fit of `y = c * m(x)` through the origin; returns `(c, R^2)`
/// with `R^2` measured against the mean of `y`.
pub fn fit_through_origin(model: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if model.len() != y.len() || model.len() < 2 {
        return Err(Error::invalid("fit needs matching arrays of length >= 2"));
    }
    let num: f64 = model.iter().zip(y).map(|(m, v)| m * v).sum();
    let den: f64 = model.iter().map(|m| m * m).sum();
    if den <= 0.0 {
        return Err(Error::invalid("degenerate model vector"));
    }
    let c = num / den;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = model
        .iter()
        .zip(y)
        .map(|(m, v)| (v - c * m).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((c, r2))
}
