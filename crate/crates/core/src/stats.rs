//! Scalar statistical primitives shared by the estimators: the quantile score,
//! the self-weight, the chi-square law, a Gaussian-kernel density estimate at
//! zero and an AR(1) persistence diagnostic.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, QprError, Result};

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(invalid(format!("quantile level must lie in (0, 1), got {tau}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `tau - 1{u <= 0}` without input validation.
    #[inline]
    pub fn psi(self, u: f64) -> f64 {
        if u <= 0.0 {
            self.0 - 1.0
        } else {
            self.0
        }
    }

    /// `tau * (1 - tau)`, the variance of the quantile score.
    #[inline]
    pub fn score_variance(self) -> f64 {
        self.0 * (1.0 - self.0)
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = QprError;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// Reference law of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionRef {
    ChiSquare { dof: u32 },
}

impl DistributionRef {
    pub fn chi_square(dof: u32) -> Result<Self> {
        if dof == 0 {
            return Err(invalid("chi-square degrees of freedom must be >= 1"));
        }
        Ok(DistributionRef::ChiSquare { dof })
    }

    pub fn dof(&self) -> u32 {
        match self {
            DistributionRef::ChiSquare { dof } => *dof,
        }
    }

    /// Upper-tail probability of `statistic`; `+inf` maps to 0.
    pub fn survival(&self, statistic: f64) -> Result<f64> {
        match self {
            DistributionRef::ChiSquare { dof } => {
                if statistic == f64::INFINITY {
                    return Ok(0.0);
                }
                Ok(1.0 - chi_square_cdf(statistic.max(0.0), *dof)?)
            }
        }
    }
}

/// Quantile score `tau - 1{u <= 0}`.
pub fn psi_tau(u: f64, tau: QuantileLevel) -> Result<f64> {
    if !u.is_finite() {
        return Err(invalid("psi_tau requires a finite argument"));
    }
    Ok(tau.psi(u))
}

#[inline]
pub(crate) fn weight(x: f64) -> f64 {
    x / (1.0 + x * x).sqrt()
}

/// Self-weight `x / sqrt(1 + x^2)`, bounded in (-1, 1).
pub fn self_weight(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid("self_weight requires a finite argument"));
    }
    Ok(weight(x))
}

#[inline]
pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x)
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (h.ln() + log_prefactor).exp();
        (1.0 - q).max(0.0)
    }
}

fn chi_square_pdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    ((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - ln_gamma(a)).exp()
}

pub fn chi_square_cdf(x: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(invalid("chi-square degrees of freedom must be >= 1"));
    }
    if x.is_nan() || x < 0.0 {
        return Err(invalid(format!("chi-square cdf needs x >= 0, got {x}")));
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(regularized_gamma_p(dof as f64 / 2.0, x / 2.0))
}

/// Inverse of [`chi_square_cdf`] by Newton steps kept inside a shrinking bracket.
pub fn chi_square_quantile(p: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(invalid("chi-square degrees of freedom must be >= 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("chi-square quantile needs p in (0, 1), got {p}")));
    }
    let cdf = |x: f64| regularized_gamma_p(dof as f64 / 2.0, x / 2.0);
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() < 1e-14 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi_square_pdf(x, dof);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Bandwidth choice for [`density_at_zero`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Hall-Sheather rate for the given quantile, scaled by IQR / 1.349.
    HallSheather(QuantileLevel),
}

/// Hall-Sheather bandwidth in probability units.
pub fn hall_sheather(n: usize, tau: QuantileLevel) -> f64 {
    let z = std_normal_quantile(0.975);
    let q = std_normal_quantile(tau.value());
    let phi = std_normal_pdf(q);
    (n as f64).powf(-1.0 / 3.0)
        * z.powf(2.0 / 3.0)
        * (1.5 * phi * phi / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
}

pub(crate) fn sample_quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    // linear interpolation between order statistics
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn robust_scale(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = sample_quantile_sorted(&sorted, 0.75) - sample_quantile_sorted(&sorted, 0.25);
    if iqr > 0.0 {
        return iqr / 1.349;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

/// Gaussian-kernel estimate of the residual density at zero, floored at 1e-10.
pub fn density_at_zero(residuals: &[f64], bandwidth: Bandwidth) -> Result<f64> {
    if residuals.len() < 10 {
        return Err(invalid(format!(
            "density_at_zero needs at least 10 residuals, got {}",
            residuals.len()
        )));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(invalid("density_at_zero: non-finite residual"));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(invalid(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::HallSheather(tau) => hall_sheather(residuals.len(), tau) * robust_scale(residuals),
    };
    let n = residuals.len() as f64;
    let sum: f64 = residuals.iter().map(|r| std_normal_pdf(r / h)).sum();
    Ok((sum / (n * h)).max(1e-10))
}

/// Least-squares fit of `x_t` on `(1, x_{t-1})`; returns `(rho_hat, intercept_hat)`.
pub fn ar1_ols(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 {
        return Err(invalid("ar1_ols needs at least 3 observations"));
    }
    let lag = &x[..x.len() - 1];
    let lead = &x[1..];
    let k = lag.len() as f64;
    let mx = lag.iter().sum::<f64>() / k;
    let my = lead.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in lag.iter().zip(lead) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= f64::EPSILON * (1.0 + mx * mx) * k {
        return Err(QprError::DegenerateRegressor(
            "lagged series has zero variance".into(),
        ));
    }
    let rho = sxy / sxx;
    Ok((rho, my - rho * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn quantile_level_rejects_boundaries() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.3).is_ok());
    }

    #[test]
    fn psi_branches() {
        assert_eq!(psi_tau(1.0, tau(0.5)).unwrap(), 0.5);
        assert_eq!(psi_tau(-1.0, tau(0.5)).unwrap(), -0.5);
        assert_eq!(psi_tau(0.0, tau(0.25)).unwrap(), -0.75);
        assert!(psi_tau(f64::INFINITY, tau(0.5)).is_err());
    }

    #[test]
    fn self_weight_values() {
        assert_eq!(self_weight(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(self_weight(1.0).unwrap(), 0.7071067811865475, epsilon = 1e-15);
        assert_abs_diff_eq!(self_weight(-3.0).unwrap(), -0.9486832980505138, epsilon = 1e-15);
        assert!(self_weight(f64::NAN).is_err());
    }

    #[test]
    fn chi_square_known_values() {
        assert_eq!(chi_square_cdf(0.0, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(chi_square_quantile(0.95, 2).unwrap(), 5.991464547107979, epsilon = 1e-9);
        assert_abs_diff_eq!(chi_square_cdf(5.991464547107979, 2).unwrap(), 0.95, epsilon = 1e-12);
        assert!(chi_square_cdf(-1.0, 1).is_err());
        assert!(chi_square_quantile(1.0, 1).is_err());
        assert!(chi_square_quantile(0.5, 0).is_err());
    }

    #[test]
    fn chi_square_round_trip_grid() {
        for dof in [1, 2, 3, 5, 10, 30] {
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let q = chi_square_quantile(p, dof).unwrap();
                assert_abs_diff_eq!(chi_square_cdf(q, dof).unwrap(), p, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn density_examples() {
        let fives = vec![5.0; 10];
        assert_abs_diff_eq!(
            density_at_zero(&fives, Bandwidth::Fixed(1.0)).unwrap(),
            std_normal_pdf(5.0),
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(std_normal_pdf(5.0), 1.4867195147342977e-6, epsilon = 1e-18);
        let pm: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        assert_abs_diff_eq!(
            density_at_zero(&pm, Bandwidth::Fixed(1.0)).unwrap(),
            0.24197072451914337,
            epsilon = 1e-15
        );
        assert!(density_at_zero(&[1.0; 9], Bandwidth::Fixed(1.0)).is_err());
        assert!(density_at_zero(&fives, Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn density_floor_applies() {
        let far = vec![100.0; 12];
        assert_eq!(density_at_zero(&far, Bandwidth::Fixed(1.0)).unwrap(), 1e-10);
    }

    #[test]
    fn ar1_examples() {
        assert!(matches!(
            ar1_ols(&[1.0, 1.0, 1.0, 1.0]),
            Err(QprError::DegenerateRegressor(_))
        ));
        let (rho, c) = ar1_ols(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(rho, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        let mut x = vec![1.0];
        for _ in 0..20 {
            let last = *x.last().unwrap();
            x.push(0.5 * last);
        }
        let (rho, c) = ar1_ols(&x).unwrap();
        assert_abs_diff_eq!(rho, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-10);
    }
}
