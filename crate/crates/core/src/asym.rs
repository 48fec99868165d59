//! Simulation diagnostics for the limit theory: the stationary-case limit
//! matrices of the split-sample estimator, the local linearization of the
//! score vector, and Ornstein-Uhlenbeck functionals of near-integrated paths.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::{simulate_system, DgpConfig};
use crate::el::{block_quantile, split_indices};
use crate::error::{invalid, QprError, Result};
use crate::qr::fit_self_weighted;
use crate::sample::{RegressionData, TimeSeriesSample};
use crate::seed::rng_from_seed;
use crate::stats::{density_at_zero, weight, Bandwidth, QuantileLevel};

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

/// Split-sample estimator of `(alpha, beta)` in the static model: for a
/// candidate slope `b` the intercept is the block-one `tau`-quantile of
/// `y_t - b x_{t-1}`, and `beta_hat` is where the block-two self-weighted
/// slope score changes sign.
pub fn split_sample_estimate(sample: &TimeSeriesSample, tau: QuantileLevel) -> Result<(f64, f64)> {
    let data = RegressionData::new(sample, false);
    let blocks = split_indices(data.len())?;
    let alpha_at = |b: f64| {
        let e: Vec<f64> = blocks
            .block1
            .clone()
            .map(|t| data.y[t] - b * data.x_lag[t])
            .collect();
        block_quantile(&e, tau)
    };
    let score = |b: f64| -> f64 {
        let a = alpha_at(b);
        blocks
            .block2
            .clone()
            .map(|t| tau.psi(data.y[t] - a - b * data.x_lag[t]) * weight(data.x_lag[t]))
            .sum()
    };
    let start = fit_self_weighted(&data, tau)?.coefficients[1];
    let mut step = 0.5 * (1.0 + start.abs());
    let (mut lo, mut hi) = (start - step, start + step);
    let (mut slo, mut shi) = (score(lo), score(hi));
    let mut expand = 0;
    while slo * shi > 0.0 {
        expand += 1;
        if expand > 60 {
            return Err(QprError::Numerical(
                "slope score does not change sign on any bracket".into(),
            ));
        }
        step *= 2.0;
        lo = start - step;
        hi = start + step;
        slo = score(lo);
        shi = score(hi);
    }
    if slo == 0.0 {
        return Ok((alpha_at(lo), lo));
    }
    if shi == 0.0 {
        return Ok((alpha_at(hi), hi));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = score(mid);
        if s == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (s > 0.0) == (slo > 0.0) {
            lo = mid;
            slo = s;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    Ok((alpha_at(b), b))
}

/// Sample counterparts of the stationary-case limit objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryLimitObjects {
    pub d1m: Matrix2<f64>,
    pub sigma1: Matrix2<f64>,
    pub a1m: f64,
    pub gamma1: Vector2<f64>,
    pub density: f64,
    /// `d1m` is numerically singular (e.g. a predictor stuck at zero).
    pub singular: bool,
}

impl StationaryLimitObjects {
    /// `gamma1' Sigma1 gamma1`, the limit variance of `A sqrt(m) (beta_hat - beta)`.
    pub fn slope_variance(&self) -> f64 {
        (self.gamma1.transpose() * self.sigma1 * self.gamma1)[(0, 0)]
    }
}

/// Limit objects evaluated at `beta_hat` with the intercept re-estimated on
/// block one. The slope coordinate of `gamma1` multiplies the block-two
/// weighted score and the intercept coordinate `-E w` nets out the
/// block-one intercept estimate.
pub fn stationary_limit_objects(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    beta_hat: f64,
) -> Result<StationaryLimitObjects> {
    let data = RegressionData::new(sample, false);
    let blocks = split_indices(data.len())?;
    let e: Vec<f64> = (0..data.len()).map(|t| data.y[t] - beta_hat * data.x_lag[t]).collect();
    let alpha = block_quantile(&e[blocks.block1.clone()], tau);
    let resid: Vec<f64> = e.iter().map(|v| v - alpha).collect();
    let f = density_at_zero(&resid, Bandwidth::HallSheather(tau))?;

    let x = &data.x_lag;
    let b1 = blocks.block1.clone();
    let b2 = blocks.block2.clone();
    let x1 = mean(b1.map(|t| x[t]));
    let w2 = mean(b2.clone().map(|t| weight(x[t])));
    let x2 = mean(b2.clone().map(|t| x[t]));
    let wx2 = mean(b2.map(|t| weight(x[t]) * x[t]));
    let d1m = Matrix2::new(1.0, x1, w2, wx2) * f;
    let ew2 = mean(x.iter().map(|v| v * v / (1.0 + v * v)));
    let sigma1 = Matrix2::new(1.0, 0.0, 0.0, ew2) * tau.score_variance();
    let a1m = (wx2 - w2 * x2) * f;
    let ew = mean(x.iter().map(|&v| weight(v)));
    let singular = d1m.determinant().abs() <= 1e-12 * f * f;
    Ok(StationaryLimitObjects {
        d1m,
        sigma1,
        a1m,
        gamma1: Vector2::new(-ew, 1.0),
        density: f,
        singular,
    })
}

/// `A sqrt(m) (beta_hat - beta) / sqrt(gamma1' Sigma1 gamma1)` for one sample.
pub fn standardized_slope(sample: &TimeSeriesSample, tau: QuantileLevel, beta_true: f64) -> Result<f64> {
    let (_, beta_hat) = split_sample_estimate(sample, tau)?;
    let obj = stationary_limit_objects(sample, tau, beta_hat)?;
    let m = (sample.n() / 2) as f64;
    Ok(obj.a1m * m.sqrt() * (beta_hat - beta_true) / obj.slope_variance().sqrt())
}

/// Norm of the remainder in `Z_m(v) = Z_m(0) - D_m v + o_p(1)`.
///
/// The sample has `2m` usable observations of the dynamic model with true
/// errors `eps_t = y_t - alpha - beta x_{t-1} - gamma y_{t-1}`; the scores are
/// evaluated at `eps_t - v' Lambda_{t-1} / sqrt(m)` with `Lambda = (1, x)`.
pub fn linearization_residual(
    config: &DgpConfig,
    tau: QuantileLevel,
    v: [f64; 2],
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m < 100 {
        return Err(invalid(format!("linearization needs m >= 100, got {m}")));
    }
    if !v.iter().all(|c| c.is_finite()) {
        return Err(invalid("v must be finite"));
    }
    let mut cfg = *config;
    cfg.n = 2 * m + 1;
    let sample = simulate_system(&cfg, seed)?;
    let data = RegressionData::new(&sample, true);
    let ylag = data.y_lag.as_ref().expect("dynamic view");
    let eps: Vec<f64> = (0..data.len())
        .map(|t| data.y[t] - cfg.alpha - cfg.beta * data.x_lag[t] - cfg.gamma_lag * ylag[t])
        .collect();
    let sm = (m as f64).sqrt();
    let wt = |t: usize| ylag[t] - cfg.beta * data.x_lag[t];
    let z = |shift: [f64; 2]| -> DVector<f64> {
        let mut out = DVector::zeros(3);
        for t in 0..2 * m {
            let d = (shift[0] + shift[1] * data.x_lag[t]) / sm;
            let p = tau.psi(eps[t] - d);
            if t < m {
                out[0] += p;
            } else {
                out[1] += p * weight(data.x_lag[t]);
                out[2] += p * wt(t);
            }
        }
        out / sm
    };
    if v == [0.0, 0.0] {
        return Ok(0.0);
    }
    let f = density_at_zero(&eps[..2 * m], Bandwidth::HallSheather(tau))?;
    let x = &data.x_lag;
    let x1 = mean((0..m).map(|t| x[t]));
    let (mut w, mut wx, mut l, mut lx) = (0.0, 0.0, 0.0, 0.0);
    for t in m..2 * m {
        w += weight(x[t]);
        wx += weight(x[t]) * x[t];
        l += wt(t);
        lx += wt(t) * x[t];
    }
    let k = m as f64;
    let d = DMatrix::from_row_slice(3, 2, &[1.0, x1, w / k, wx / k, l / k, lx / k]) * f;
    let vv = DVector::from_column_slice(&v);
    let rem = z(v) - z([0.0, 0.0]) + d * vv;
    Ok(rem.norm())
}

/// Discretized Ornstein-Uhlenbeck path on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuPath {
    pub c: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl OuPath {
    pub fn endpoint(&self) -> f64 {
        *self.values.last().expect("non-empty path")
    }

    /// `int_0^1 J(r / 2) dr = 2 int_0^{1/2} J(s) ds` by a left Riemann sum.
    pub fn half_horizon_average(&self) -> f64 {
        let steps = self.values.len() - 1;
        let half = steps / 2;
        2.0 * self.values[..half].iter().sum::<f64>() / steps as f64
    }
}

/// Euler-Maruyama for `dJ = c J dt + dW`, `J(0) = 0`.
pub fn simulate_jc(c: f64, steps: usize, seed: u64) -> Result<OuPath> {
    if steps < 100 {
        return Err(invalid(format!("need at least 100 steps, got {steps}")));
    }
    if !c.is_finite() {
        return Err(invalid("c must be finite"));
    }
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(steps + 1);
    let mut j = 0.0;
    values.push(j);
    for _ in 0..steps {
        let dw: f64 = StandardNormal.sample(&mut rng);
        j += c * j * dt + sd * dw;
        values.push(j);
    }
    Ok(OuPath {
        c,
        grid: (0..=steps).map(|k| k as f64 * dt).collect(),
        values,
    })
}

/// Variance of `J_c(1)`: `(e^{2c} - 1) / (2c)`, and 1 at `c = 0`.
pub fn ou_endpoint_variance(c: f64) -> f64 {
    if c.abs() < 1e-12 {
        1.0
    } else {
        (2.0 * c).exp_m1() / (2.0 * c)
    }
}

/// `(x_n / sqrt(m), (1/m) sum_{t<=m} x_{t-1} / sqrt(m))` with `m = floor(n/2)`.
/// Under `rho = 1 + c/n` these approach `sqrt(2 sigma_vv) J_c(1)` and
/// `sqrt(2 sigma_vv) int_0^1 J_c(r/2) dr`; the factor reflects the `2m`-step
/// horizon.
pub fn scaled_path_functional(config: &DgpConfig, seed: u64) -> Result<(f64, f64)> {
    if config.persistence.gamma_exp != 1.0 {
        return Err(invalid("path functionals need a near-integrated predictor (gamma_exp = 1)"));
    }
    let sample = simulate_system(config, seed)?;
    let x = sample.x();
    let n = sample.n();
    let m = n / 2;
    let sm = (m as f64).sqrt();
    let avg = x[..m].iter().sum::<f64>() / (m as f64 * sm);
    Ok((x[n] / sm, avg))
}

/// Kolmogorov-Smirnov distance between the empirical law of `sample` and
/// the standard normal.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{InnovationSpec, PersistenceSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_predictor_gives_singular_d() {
        let n = 200;
        let y: Vec<f64> = (0..n).map(|t| ((t * 37) % 19) as f64 - 9.0).collect();
        let s = TimeSeriesSample::new(y, vec![0.0; n + 1]).unwrap();
        let tau = QuantileLevel::new(0.5).unwrap();
        let obj = stationary_limit_objects(&s, tau, 0.0).unwrap();
        assert!(obj.singular);
        assert_eq!(obj.d1m[(0, 1)], 0.0);
        assert_eq!(obj.d1m[(1, 1)], 0.0);
        assert_eq!(obj.d1m[(0, 0)], obj.density);
        assert_eq!(obj.sigma1[(0, 0)], 0.25);
        assert_eq!(obj.sigma1[(1, 1)], 0.0);
    }

    #[test]
    fn linearization_is_exact_at_centre() {
        let cfg = DgpConfig::new(
            500,
            PersistenceSpec::stationary(0.5),
            InnovationSpec::gaussian(1.0, 1.0, -0.5),
        );
        let tau = QuantileLevel::new(0.5).unwrap();
        assert_eq!(linearization_residual(&cfg, tau, [0.0, 0.0], 200, 3).unwrap(), 0.0);
        assert!(linearization_residual(&cfg, tau, [1.0, 1.0], 99, 3).is_err());
    }

    #[test]
    fn ou_variance_formula() {
        assert_abs_diff_eq!(ou_endpoint_variance(-2.0), 0.24542109, epsilon = 1e-8);
        assert_eq!(ou_endpoint_variance(0.0), 1.0);
    }

    #[test]
    fn ou_path_shape() {
        let p = simulate_jc(-1.0, 100, 9).unwrap();
        assert_eq!(p.values[0], 0.0);
        assert_eq!(p.grid.len(), 101);
        assert_eq!(p.grid[100], 1.0);
        assert!(p.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(simulate_jc(0.0, 99, 1).is_err());
    }

    #[test]
    fn null_path_functional() {
        let cfg = DgpConfig::new(100, PersistenceSpec::local_to_unity(-3.0), InnovationSpec::degenerate());
        assert_eq!(scaled_path_functional(&cfg, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn ks_distances() {
        assert_eq!(ks_distance_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_distance_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        let d = ks_distance_normal(&[0.0]);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
    }
}
