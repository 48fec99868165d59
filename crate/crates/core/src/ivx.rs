//! IVX instrumentation and the instrumented quantile score test.
//!
//! The predictor is filtered into a mildly integrated instrument
//! `z_t = rho_z z_{t-1} + dx_t` with `rho_z = 1 - c_z / n^delta`. The test
//! is a score (Lagrange-multiplier) test: the model is fitted under the null,
//! and the instrumented quantile scores of the restricted residuals are
//! studentized with their martingale variance `tau (1 - tau) sum z z'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::el::{block_quantile, ensure_regressor_varies};
use crate::error::{invalid, QprError, Result};
use crate::inference::{Hypothesis, Method, TestResult};
use crate::qr::{fit_quantile_regression, fit_self_weighted, self_weights};
use crate::sample::{RegressionData, TimeSeriesSample};
use crate::stats::{ar1_ols, density_at_zero, Bandwidth, QuantileLevel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvxConfig {
    pub c_z: f64,
    pub delta: f64,
}

impl Default for IvxConfig {
    fn default() -> Self {
        Self { c_z: 1.0, delta: 0.95 }
    }
}

impl IvxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_z > 0.0 && self.c_z.is_finite()) {
            return Err(invalid(format!("c_z must be positive, got {}", self.c_z)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn rho_z(&self, n: usize) -> f64 {
        1.0 - self.c_z / (n as f64).powf(self.delta)
    }
}

/// `z_1..z_n` from `x_0..x_n`.
pub fn build_instrument(x: &[f64], config: &IvxConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if x.len() < 3 {
        return Err(invalid("instrument needs x_0..x_n with n >= 2"));
    }
    let n = x.len() - 1;
    let rho = config.rho_z(n);
    let mut z = Vec::with_capacity(n);
    let mut prev = 0.0;
    for j in 1..=n {
        prev = rho * prev + (x[j] - x[j - 1]);
        z.push(prev);
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvxTestConfig {
    #[serde(flatten)]
    pub ivx: IvxConfig,
    pub dynamic: bool,
    pub level: f64,
}

impl Default for IvxTestConfig {
    fn default() -> Self {
        Self {
            ivx: IvxConfig::default(),
            dynamic: true,
            level: 0.05,
        }
    }
}

fn demean(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Least-squares residual of `v` on the columns of `basis`.
fn residualize(v: &[f64], basis: &DMatrix<f64>) -> Result<Vec<f64>> {
    let xtx = basis.transpose() * basis;
    let xtv = basis.transpose() * DVector::from_column_slice(v);
    let coef = xtx
        .cholesky()
        .ok_or_else(|| QprError::Singular("projection basis is collinear".into()))?
        .solve(&xtv);
    let fitted = basis * coef;
    Ok(v.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect())
}

/// Instrument aligned with a regression view: entry `i` is `z_{t-1}` for
/// the `i`-th response `y_t`, with `z_0 = 0`.
fn lagged_instrument(sample: &TimeSeriesSample, dynamic: bool, config: &IvxConfig) -> Result<Vec<f64>> {
    let z = build_instrument(sample.x(), config)?;
    let n = sample.n();
    let mut lagged = Vec::with_capacity(n);
    lagged.push(0.0);
    lagged.extend_from_slice(&z[..n - 1]);
    Ok(if dynamic { lagged[1..].to_vec() } else { lagged })
}

/// Instrumented score summands `g_t psi_t` (one column per restriction)
/// together with the normalizer `M` of their sum.
///
/// Column 0 is the centred IVX instrument. Centring a mildly integrated
/// instrument removes a mean that is itself correlated with the quantile
/// scores through the predictor innovations, so
/// `M = tau (1 - tau) (G'G + r2 |z - z_centred|^2 e_0 e_0')` with `r2` the
/// squared correlation between the scores and the predictor innovations.
#[derive(Debug, Clone, PartialEq)]
pub struct IvxScoreParts {
    pub summands: DMatrix<f64>,
    pub normalizer: DMatrix<f64>,
}

impl IvxScoreParts {
    /// `S' M^{-1} S` for the score sum `S` of `summands`.
    pub fn wald(&self, summands: &DMatrix<f64>) -> Result<f64> {
        let s: DVector<f64> = summands.row_sum().transpose();
        let chol = self
            .normalizer
            .clone()
            .cholesky()
            .ok_or_else(|| QprError::Singular("instrument normalizer is singular".into()))?;
        Ok(s.dot(&chol.solve(&s)).max(0.0))
    }

    pub fn statistic(&self) -> Result<f64> {
        self.wald(&self.summands)
    }
}

/// Predictor innovations `v_t` aligned with the regression view, from an
/// AR(1) least-squares fit of the whole predictor path.
fn predictor_innovations(sample: &TimeSeriesSample, dynamic: bool) -> Result<Vec<f64>> {
    let x = sample.x();
    let (rho, c) = ar1_ols(x)?;
    let start = if dynamic { 2 } else { 1 };
    Ok((start..x.len()).map(|t| x[t] - c - rho * x[t - 1]).collect())
}

fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab * sab / (saa * sbb)).min(1.0)
    }
}

/// IVX quantile score test of `hypothesis` with chi-square calibration.
pub fn ivx_qr_test(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    hypothesis: Hypothesis,
    config: &IvxTestConfig,
) -> Result<TestResult> {
    let parts = ivx_score_parts(sample, tau, hypothesis, config)?;
    let stat = parts.statistic()?;
    TestResult::asymptotic(
        Method::Ivx,
        hypothesis,
        stat,
        parts.summands.ncols() as u32,
        true,
        config.level,
    )
}

/// Null-restricted fit and instrumented scores behind [`ivx_qr_test`].
pub fn ivx_score_parts(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    hypothesis: Hypothesis,
    config: &IvxTestConfig,
) -> Result<IvxScoreParts> {
    let dynamic = config.dynamic || hypothesis.needs_dynamic();
    let data = RegressionData::new(sample, dynamic);
    let zlag = lagged_instrument(sample, dynamic, &config.ivx)?;
    if zlag.iter().all(|&v| v == 0.0) {
        return Err(QprError::DegenerateInstrument(
            "instrument is identically zero (predictor has no variation)".into(),
        ));
    }
    ensure_regressor_varies(&data.x_lag)?;
    let n = data.len();
    let with_col = |col: &[f64]| {
        let mut b = DMatrix::from_element(n, 2, 1.0);
        b.set_column(1, &DVector::from_column_slice(col));
        b
    };

    let (residuals, columns): (Vec<f64>, Vec<Vec<f64>>) = match (hypothesis, dynamic) {
        (Hypothesis::BetaOnly, false) => {
            let q = block_quantile(&data.y, tau);
            (data.y.iter().map(|y| y - q).collect(), vec![demean(&zlag)])
        }
        (Hypothesis::Joint, _) => {
            let q = block_quantile(&data.y, tau);
            let ylag = data.y_lag.as_ref().expect("dynamic view");
            (
                data.y.iter().map(|y| y - q).collect(),
                vec![demean(&zlag), demean(ylag)],
            )
        }
        (Hypothesis::BetaOnly, true) => {
            let ylag = data.y_lag.as_ref().expect("dynamic view");
            let design = with_col(ylag);
            let fit = fit_quantile_regression(&design, &data.y, tau, None)?;
            (fit.residuals, vec![residualize(&zlag, &design)?])
        }
        (Hypothesis::GammaOnly, _) => {
            let ylag = data.y_lag.as_ref().expect("dynamic view");
            let design = with_col(&data.x_lag);
            let w = self_weights(&data.x_lag);
            let fit = fit_quantile_regression(&design, &data.y, tau, Some(&w))?;
            (fit.residuals, vec![residualize(ylag, &design)?])
        }
    };
    let psi: Vec<f64> = residuals.iter().map(|&r| tau.psi(r)).collect();
    let k = columns.len();
    let g = DMatrix::from_fn(n, k, |t, j| columns[j][t]);
    let mut gram = g.transpose() * &g;
    if hypothesis != Hypothesis::GammaOnly {
        let removed: f64 = zlag.iter().zip(&columns[0]).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = predictor_innovations(sample, dynamic)?;
        gram[(0, 0)] += squared_correlation(&psi, &v) * removed;
    }
    let summands = DMatrix::from_fn(n, k, |t, j| g[(t, j)] * psi[t]);
    Ok(IvxScoreParts {
        summands,
        normalizer: gram * tau.score_variance(),
    })
}

/// Unrestricted self-weighted fit with its residual density at zero, as
/// reported next to the IVX test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvxFitSummary {
    pub coefficients: Vec<f64>,
    pub density_at_zero: f64,
    pub rho_z: f64,
}

pub fn ivx_fit_summary(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    config: &IvxTestConfig,
) -> Result<IvxFitSummary> {
    config.ivx.validate()?;
    let data = RegressionData::new(sample, config.dynamic);
    let fit = fit_self_weighted(&data, tau)?;
    Ok(IvxFitSummary {
        density_at_zero: density_at_zero(&fit.residuals, Bandwidth::HallSheather(tau))?,
        coefficients: fit.coefficients,
        rho_z: config.ivx.rho_z(sample.n()),
    })
}
