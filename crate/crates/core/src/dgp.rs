//! Synthetic samples from the predictive-regression system
//!
//! ```text
//! y_t = alpha + beta * x_{t-1} + gamma_lag * y_{t-1} + u_t
//! x_t = mu * (1 - rho) + rho * x_{t-1} + v_t,      rho = 1 + c / n^gamma_exp
//! ```
//!
//! Innovations are bivariate Gaussian, componentwise Student-t, or a
//! constant-correlation ARCH(1) pair in which `u_t = vartheta * v_t + e_t`.

use nalgebra::Matrix2;
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, QprError, Result};
use crate::sample::{SampleMeta, TimeSeriesSample};
use crate::seed::{fnv1a, rng_from_seed, Rng};
use crate::stats::{std_normal_quantile, QuantileLevel};

const BURN_IN: usize = 100;
const EXPLOSIVE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSpec {
    /// Signed localizing coefficient.
    pub c: f64,
    /// Exponent in `k_n = n^gamma_exp`.
    pub gamma_exp: f64,
    /// Unconditional mean of a stationary `x`.
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub x0: f64,
}

impl PersistenceSpec {
    pub fn local_to_unity(c: f64) -> Self {
        Self {
            c,
            gamma_exp: 1.0,
            mu: 0.0,
            x0: 0.0,
        }
    }

    /// Fixed autoregressive root `rho` (`gamma_exp = 0`).
    pub fn stationary(rho: f64) -> Self {
        Self {
            c: rho - 1.0,
            gamma_exp: 0.0,
            mu: 0.0,
            x0: 0.0,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    /// Builds the mean-centred form from a raw intercept `x_t = raw + rho x_{t-1} + v_t`.
    pub fn from_raw_intercept(c: f64, gamma_exp: f64, raw: f64, x0: f64, n: usize) -> Result<Self> {
        let mut spec = Self {
            c,
            gamma_exp,
            mu: 0.0,
            x0,
        };
        let rho = spec.rho(n)?;
        if raw != 0.0 {
            if rho == 1.0 {
                return Err(invalid(
                    "a raw intercept under an exact unit root is a drift and has no mean-centred form",
                ));
            }
            spec.mu = raw / (1.0 - rho);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma_exp) {
            return Err(invalid(format!(
                "gamma_exp must lie in [0, 1], got {}",
                self.gamma_exp
            )));
        }
        if !(self.c.is_finite() && self.mu.is_finite() && self.x0.is_finite()) {
            return Err(invalid("persistence parameters must be finite"));
        }
        Ok(())
    }

    pub fn rho(&self, n: usize) -> Result<f64> {
        rho_from_persistence(self, n)
    }
}

/// `rho_n = 1 + c / n^gamma_exp`.
pub fn rho_from_persistence(spec: &PersistenceSpec, n: usize) -> Result<f64> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("sample size must be >= 1"));
    }
    let k = (n as f64).powf(spec.gamma_exp);
    let rho = 1.0 + spec.c / k;
    if rho.abs() > 2.0 {
        return Err(QprError::Config(format!(
            "autoregressive root {rho} is outside [-2, 2]; check c and gamma_exp"
        )));
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub omega: f64,
    pub a1: f64,
}

impl ArchParams {
    fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(invalid(format!("ARCH omega must be > 0, got {}", self.omega)));
        }
        if !(0.0..1.0).contains(&self.a1) {
            return Err(invalid(format!("ARCH a1 must lie in [0, 1), got {}", self.a1)));
        }
        Ok(())
    }

    fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.a1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InnovationFamily {
    Gaussian,
    StudentT {
        dof: f64,
    },
    /// `v_t = eps_x`, `u_t = vartheta * eps_x + eps_yx`, each `eps` an ARCH(1)
    /// process with Gaussian shocks.
    CcArch {
        vartheta: f64,
        x: ArchParams,
        yx: ArchParams,
    },
    /// All innovations identically zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    #[serde(flatten)]
    pub family: InnovationFamily,
    #[serde(default = "one")]
    pub sigma_uu: f64,
    #[serde(default = "one")]
    pub sigma_vv: f64,
    #[serde(default)]
    pub rho_uv: f64,
}

fn one() -> f64 {
    1.0
}

impl InnovationSpec {
    pub fn gaussian(sigma_uu: f64, sigma_vv: f64, rho_uv: f64) -> Self {
        Self {
            family: InnovationFamily::Gaussian,
            sigma_uu,
            sigma_vv,
            rho_uv,
        }
    }

    pub fn student_t(dof: f64, sigma_uu: f64, sigma_vv: f64, rho_uv: f64) -> Self {
        Self {
            family: InnovationFamily::StudentT { dof },
            sigma_uu,
            sigma_vv,
            rho_uv,
        }
    }

    pub fn cc_arch(vartheta: f64, x: ArchParams, yx: ArchParams) -> Self {
        Self {
            family: InnovationFamily::CcArch { vartheta, x, yx },
            sigma_uu: 1.0,
            sigma_vv: 1.0,
            rho_uv: 0.0,
        }
    }

    pub fn degenerate() -> Self {
        Self {
            family: InnovationFamily::Degenerate,
            sigma_uu: 0.0,
            sigma_vv: 0.0,
            rho_uv: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            InnovationFamily::Degenerate => Ok(()),
            InnovationFamily::CcArch { vartheta, x, yx } => {
                if !vartheta.is_finite() {
                    return Err(invalid("vartheta must be finite"));
                }
                x.validate()?;
                yx.validate()
            }
            InnovationFamily::Gaussian | InnovationFamily::StudentT { .. } => {
                if let InnovationFamily::StudentT { dof } = self.family {
                    if !(dof > 2.0) {
                        return Err(invalid(format!("student-t innovations need dof > 2, got {dof}")));
                    }
                }
                if !(self.sigma_uu > 0.0 && self.sigma_vv > 0.0) {
                    return Err(invalid("innovation variances must be positive"));
                }
                if !(self.rho_uv.abs() < 1.0) {
                    return Err(invalid(format!(
                        "innovation covariance is not positive definite (rho_uv = {})",
                        self.rho_uv
                    )));
                }
                Ok(())
            }
        }
    }

    /// `tau`-quantile of the standardized shock driving `u_t`; multiply by
    /// the conditional scale to get the conditional quantile of `u_t`.
    fn standardized_quantile(&self, tau: QuantileLevel) -> f64 {
        match self.family {
            InnovationFamily::Degenerate => 0.0,
            InnovationFamily::Gaussian | InnovationFamily::CcArch { .. } => {
                std_normal_quantile(tau.value())
            }
            InnovationFamily::StudentT { dof } => {
                let t = StudentsT::new(0.0, 1.0, dof).expect("validated dof");
                t.inverse_cdf(tau.value()) * ((dof - 2.0) / dof).sqrt()
            }
        }
    }
}

/// Innovation paths with the conditional standard deviation of `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovations {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma_u: Vec<f64>,
}

/// Conditional covariance `D Theta_t D'` of `(eps_x, eps_y)` under the
/// constant-correlation ARCH design.
pub fn cc_arch_covariance(vartheta: f64, sigma2_x: f64, sigma2_yx: f64) -> Result<Matrix2<f64>> {
    if !(sigma2_x > 0.0 && sigma2_yx > 0.0) {
        return Err(invalid("conditional variances must be positive"));
    }
    let d = Matrix2::new(1.0, 0.0, vartheta, 1.0);
    let theta = Matrix2::new(sigma2_x, 0.0, 0.0, sigma2_yx);
    Ok(d * theta * d.transpose())
}

fn draw_innovations(spec: &InnovationSpec, n: usize, rng: &mut Rng) -> Innovations {
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut sigma_u = Vec::with_capacity(n);
    match spec.family {
        InnovationFamily::Degenerate => {
            u.resize(n, 0.0);
            v.resize(n, 0.0);
            sigma_u.resize(n, 0.0);
        }
        InnovationFamily::Gaussian | InnovationFamily::StudentT { .. } => {
            let su = spec.sigma_uu.sqrt();
            let sv = spec.sigma_vv.sqrt();
            let r = spec.rho_uv;
            let r_perp = (1.0 - r * r).sqrt();
            let chi = match spec.family {
                InnovationFamily::StudentT { dof } => Some((dof, ChiSquared::new(dof).expect("dof > 2"))),
                _ => None,
            };
            let shock = |rng: &mut Rng| -> f64 {
                let z: f64 = rng.sample(StandardNormal);
                match &chi {
                    None => z,
                    Some((dof, chi)) => {
                        let w = chi.sample(rng);
                        z / (w / dof).sqrt() * ((dof - 2.0) / dof).sqrt()
                    }
                }
            };
            for _ in 0..n {
                let z1 = shock(rng);
                let z2 = shock(rng);
                u.push(su * z1);
                v.push(sv * (r * z1 + r_perp * z2));
                sigma_u.push(su);
            }
        }
        InnovationFamily::CcArch { vartheta, x, yx } => {
            let mut e2_x = x.unconditional_variance();
            let mut e2_yx = yx.unconditional_variance();
            for t in 0..n + BURN_IN {
                let s2x = x.omega + x.a1 * e2_x;
                let s2yx = yx.omega + yx.a1 * e2_yx;
                let zx: f64 = rng.sample(StandardNormal);
                let zyx: f64 = rng.sample(StandardNormal);
                let ex = s2x.sqrt() * zx;
                let eyx = s2yx.sqrt() * zyx;
                e2_x = ex * ex;
                e2_yx = eyx * eyx;
                if t >= BURN_IN {
                    v.push(ex);
                    u.push(vartheta * ex + eyx);
                    sigma_u.push((vartheta * vartheta * s2x + s2yx).sqrt());
                }
            }
        }
    }
    Innovations { u, v, sigma_u }
}

/// Innovation pairs `(u_t, v_t)` from a seeded stream.
pub fn simulate_innovations(spec: &InnovationSpec, n: usize, seed: u64) -> Result<Innovations> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("need at least one innovation"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(draw_innovations(spec, n, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub gamma_lag: f64,
    pub persistence: PersistenceSpec,
    pub innovations: InnovationSpec,
    /// When set, `u_t` is recentred so its conditional quantile at this level is zero.
    #[serde(default)]
    pub quantile_shift: Option<QuantileLevel>,
}

impl DgpConfig {
    pub fn new(n: usize, persistence: PersistenceSpec, innovations: InnovationSpec) -> Self {
        Self {
            n,
            alpha: 0.0,
            beta: 0.0,
            gamma_lag: 0.0,
            persistence,
            innovations,
            quantile_shift: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(invalid(format!("sample size must be >= 20, got {}", self.n)));
        }
        if self.gamma_lag != 0.0 && !(self.gamma_lag.abs() < 1.0) {
            return Err(invalid(format!(
                "|gamma_lag| must be < 1, got {}",
                self.gamma_lag
            )));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(invalid("alpha and beta must be finite"));
        }
        self.persistence.validate()?;
        self.innovations.validate()?;
        self.persistence.rho(self.n).map(|_| ())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    fn burn_in(&self, rho: f64) -> usize {
        if self.persistence.gamma_exp == 0.0 && rho.abs() < 1.0 {
            BURN_IN
        } else {
            0
        }
    }
}

/// Generates `(y_1..y_n, x_0..x_n)` from `config`. `y_0` starts at
/// `alpha / (1 - gamma_lag)`; a fixed-root stationary `x` gets a 100-step
/// burn-in that is discarded.
pub fn simulate_system(config: &DgpConfig, seed: u64) -> Result<TimeSeriesSample> {
    config.validate()?;
    let n = config.n;
    let rho = config.persistence.rho(n)?;
    let burn = config.burn_in(rho);
    let mut rng = rng_from_seed(seed);
    let innov = draw_innovations(&config.innovations, n + burn, &mut rng);
    let shift_q = config
        .quantile_shift
        .map(|tau| config.innovations.standardized_quantile(tau));

    let mu_term = config.persistence.mu * (1.0 - rho);
    let mut x_prev = config.persistence.x0;
    let mut y_prev = config.alpha / (1.0 - config.gamma_lag);
    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n);
    if burn == 0 {
        x.push(x_prev);
    }
    for t in 0..n + burn {
        let mut u = innov.u[t];
        if let Some(q) = shift_q {
            u -= innov.sigma_u[t] * q;
        }
        let x_t = mu_term + rho * x_prev + innov.v[t];
        let y_t = config.alpha + config.beta * x_prev + config.gamma_lag * y_prev + u;
        if !(x_t.abs() <= EXPLOSIVE_BOUND) || !y_t.is_finite() {
            return Err(QprError::ExplosivePath { t: t + 1 });
        }
        if t + 1 == burn {
            x.push(x_t);
        } else if t + 1 > burn {
            x.push(x_t);
            y.push(y_t);
        }
        x_prev = x_t;
        y_prev = y_t;
    }
    let meta = SampleMeta {
        seed: Some(seed),
        config_digest: Some(config.digest()),
        label: None,
    };
    Ok(TimeSeriesSample::new(y, x)?.with_meta(meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rho_examples() {
        let p = |c, g| PersistenceSpec {
            c,
            gamma_exp: g,
            mu: 0.0,
            x0: 0.0,
        };
        assert_eq!(rho_from_persistence(&p(0.0, 1.0), 100).unwrap(), 1.0);
        assert_abs_diff_eq!(rho_from_persistence(&p(-5.0, 1.0), 100).unwrap(), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(rho_from_persistence(&p(-5.0, 0.5), 100).unwrap(), 0.5, epsilon = 1e-15);
        assert!(rho_from_persistence(&p(-5.0, 0.0), 100).is_err());
        assert!(rho_from_persistence(&p(0.0, 1.5), 100).is_err());
    }

    #[test]
    fn raw_intercept_converts_to_mean() {
        let spec = PersistenceSpec::from_raw_intercept(-0.5, 0.0, 1.0, 0.0, 100).unwrap();
        assert_abs_diff_eq!(spec.mu, 2.0, epsilon = 1e-12);
        assert!(PersistenceSpec::from_raw_intercept(0.0, 1.0, 1.0, 0.0, 100).is_err());
    }

    #[test]
    fn cc_arch_covariance_examples() {
        assert_eq!(cc_arch_covariance(0.0, 1.0, 1.0).unwrap(), Matrix2::identity());
        assert_eq!(
            cc_arch_covariance(2.0, 1.0, 3.0).unwrap(),
            Matrix2::new(1.0, 2.0, 2.0, 7.0)
        );
        let m = cc_arch_covariance(-0.7, 2.5, 0.4).unwrap();
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        assert_abs_diff_eq!(m.determinant(), 2.5 * 0.4, epsilon = 1e-12);
        assert!(cc_arch_covariance(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn innovation_validation() {
        assert!(simulate_innovations(&InnovationSpec::gaussian(1.0, 1.0, 1.0), 10, 1).is_err());
        assert!(simulate_innovations(&InnovationSpec::student_t(2.0, 1.0, 1.0, 0.0), 10, 1).is_err());
        let bad_arch = InnovationSpec::cc_arch(
            1.0,
            ArchParams { omega: 1.0, a1: 1.0 },
            ArchParams { omega: 1.0, a1: 0.2 },
        );
        assert!(simulate_innovations(&bad_arch, 10, 1).is_err());
    }

    #[test]
    fn innovations_are_deterministic() {
        let spec = InnovationSpec::gaussian(1.0, 2.0, -0.4);
        let a = simulate_innovations(&spec, 50, 99).unwrap();
        let b = simulate_innovations(&spec, 50, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_innovations(&spec, 50, 100).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn noiseless_path_is_constant() {
        let mut cfg = DgpConfig::new(50, PersistenceSpec::local_to_unity(0.0), InnovationSpec::degenerate());
        cfg.alpha = 0.3;
        cfg.gamma_lag = 0.4;
        let s = simulate_system(&cfg, 1).unwrap();
        assert!(s.x().iter().all(|&v| v == 0.0));
        let level = 0.3 / (1.0 - 0.4);
        for y in s.y() {
            assert_abs_diff_eq!(*y, level, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulate_system_is_deterministic() {
        let mut cfg = DgpConfig::new(
            200,
            PersistenceSpec::local_to_unity(-5.0),
            InnovationSpec::gaussian(1.0, 1.0, -0.5),
        );
        cfg.beta = 0.2;
        let a = simulate_system(&cfg, 7).unwrap();
        let b = simulate_system(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 200);
        assert_eq!(a.x().len(), 201);
    }

    #[test]
    fn explosive_path_is_reported() {
        let cfg = DgpConfig::new(
            5000,
            PersistenceSpec {
                c: 0.9,
                gamma_exp: 0.0,
                mu: 0.0,
                x0: 1.0,
            },
            InnovationSpec::gaussian(1.0, 1.0, 0.0),
        );
        assert!(matches!(simulate_system(&cfg, 3), Err(QprError::ExplosivePath { .. })));
    }

    #[test]
    fn config_rejects_bad_values() {
        let base = DgpConfig::new(100, PersistenceSpec::local_to_unity(0.0), InnovationSpec::gaussian(1.0, 1.0, 0.0));
        let mut c = base;
        c.n = 19;
        assert!(c.validate().is_err());
        let mut c = base;
        c.gamma_lag = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn quantile_shift_centres_the_error() {
        let tau = QuantileLevel::new(0.25).unwrap();
        let mut cfg = DgpConfig::new(
            20_000,
            PersistenceSpec::stationary(0.5),
            InnovationSpec::gaussian(1.0, 1.0, 0.0),
        );
        cfg.quantile_shift = Some(tau);
        let s = simulate_system(&cfg, 11).unwrap();
        let below = s.y().iter().filter(|&&y| y <= 0.0).count() as f64 / s.n() as f64;
        assert!((below - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 20_000.0).sqrt());
    }
}
