//! Split-sample self-weighted empirical likelihood for the dynamic quantile
//! predictive regression.
//!
//! The sample is cut into two blocks of `m = floor(n / 2)` observations. The
//! intercept score `psi(e_t - alpha)` lives on the first block; the slope
//! score `psi(.) * w_t` with `w_t = x_{t-1} / sqrt(1 + x_{t-1}^2)` and the lag
//! score `psi(.) * (y_{t-1} - beta x_{t-1})` live on the second. Row `i` of a
//! [`ScorePanel`] pairs observation `i` of block one with observation `m + i`
//! of block two.
//!
//! When the intercept is estimated from block one, each block-two column is
//! orthogonalized against the intercept score using the block-two mean of its
//! weight. This is the closed form of profiling the intercept out of the joint
//! `(alpha, beta[, gamma])` likelihood: the intercept moves `E psi * w` by
//! `-f(0) E w` per unit, the intercept score by `-f(0)`, so
//! `psi_2 w - mean(w) psi_1` is first-order free of the intercept estimate.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QprError, Result};
use crate::inference::{Hypothesis, Method, TestResult};
use crate::qr::{fit_self_weighted, integrated_biweight, regression_design, sandwich_standard_errors, self_weights};
use crate::sample::{RegressionData, TimeSeriesSample};
use crate::stats::{chi_square_quantile, weight, QuantileLevel};

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_GRAD_TOL: f64 = 1e-10;
/// Once inside the tolerance, keep polishing until the gradient stops
/// shrinking or hits rounding level.
const NEWTON_POLISH_TOL: f64 = 1e-15;
const PROFILE_GRID: usize = 41;
const PROFILE_GOLDEN_ITER: usize = 60;

/// Block layout of the split sample, as 0-based half-open ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBlocks {
    pub block1: Range<usize>,
    pub block2: Range<usize>,
    pub m: usize,
}

impl SplitBlocks {
    /// Floor split without a minimum size; an odd final observation is unused.
    pub fn for_len(n: usize) -> Self {
        let m = n / 2;
        Self {
            block1: 0..m,
            block2: m..2 * m,
            m,
        }
    }
}

/// Split with the minimum sample size enforced (`n >= 40`).
pub fn split_indices(n: usize) -> Result<SplitBlocks> {
    if n < 40 {
        return Err(invalid(format!(
            "split-sample inference needs n >= 40 observations, got {n}"
        )));
    }
    Ok(SplitBlocks::for_len(n))
}

/// How the indicator inside the quantile score is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKernel {
    #[default]
    Indicator,
    /// `tau - G(-u / h)` with the integrated biweight `G`.
    Smoothed { bandwidth: f64 },
}

impl ScoreKernel {
    #[inline]
    fn psi(self, u: f64, tau: QuantileLevel) -> f64 {
        match self {
            ScoreKernel::Indicator => tau.psi(u),
            ScoreKernel::Smoothed { bandwidth } => tau.value() - integrated_biweight(-u / bandwidth),
        }
    }
}

/// Per-row scores. Column 0 is the intercept score on block one, column 1
/// the self-weighted slope score on block two, column 2 (dynamic models) the
/// lag score on block two.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    pub z: DMatrix<f64>,
    pub blocks: SplitBlocks,
    /// Block-two means of the weights multiplying `psi` in columns 1.. .
    pub weight_means: Vec<f64>,
    /// Largest `|y_{t-1} - beta x_{t-1}|` on block two; large values flag an
    /// unbounded lag weight.
    pub max_abs_lag_weight: Option<f64>,
}

impl ScorePanel {
    pub fn m(&self) -> usize {
        self.blocks.m
    }

    /// Columns 1.. with the intercept score projected out.
    pub fn orthogonalized(&self) -> DMatrix<f64> {
        let k = self.z.ncols() - 1;
        DMatrix::from_fn(self.m(), k, |i, j| {
            self.z[(i, j + 1)] - self.weight_means[j] * self.z[(i, 0)]
        })
    }

    /// Columns 1.. as they are (for a known intercept).
    pub fn slope_columns(&self) -> DMatrix<f64> {
        self.z.columns(1, self.z.ncols() - 1).into_owned()
    }
}

/// Residual `y_t - beta x_{t-1} - gamma y_{t-1}` before the intercept.
fn partial_residuals(data: &RegressionData, beta: f64, gamma: Option<f64>) -> Vec<f64> {
    match (gamma, &data.y_lag) {
        (Some(g), Some(ylag)) => (0..data.len())
            .map(|t| data.y[t] - beta * data.x_lag[t] - g * ylag[t])
            .collect(),
        _ => (0..data.len()).map(|t| data.y[t] - beta * data.x_lag[t]).collect(),
    }
}

/// Smallest `a` with at least `ceil(m * tau)` of `values` at or below it;
/// this zeroes the intercept score up to one observation.
pub fn block_quantile(values: &[f64], tau: QuantileLevel) -> f64 {
    let m = values.len();
    let k = ((m as f64 * tau.value()).ceil() as usize).clamp(1, m);
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Builds the split-sample score panel at `(alpha, beta[, gamma])`.
pub fn score_panel(
    data: &RegressionData,
    tau: QuantileLevel,
    alpha: f64,
    beta: f64,
    gamma: Option<f64>,
    kernel: ScoreKernel,
) -> Result<ScorePanel> {
    let blocks = split_indices(data.len())?;
    if !(alpha.is_finite() && beta.is_finite() && gamma.map_or(true, f64::is_finite)) {
        return Err(invalid("score coefficients must be finite"));
    }
    if gamma.is_some() && !data.is_dynamic() {
        return Err(invalid("a lag coefficient needs the dynamic regression view"));
    }
    let e = partial_residuals(data, beta, gamma);
    Ok(build_panel(data, tau, alpha, beta, gamma.is_some(), &e, blocks, kernel))
}

#[allow(clippy::too_many_arguments)]
fn build_panel(
    data: &RegressionData,
    tau: QuantileLevel,
    alpha: f64,
    beta: f64,
    with_lag: bool,
    e: &[f64],
    blocks: SplitBlocks,
    kernel: ScoreKernel,
) -> ScorePanel {
    let m = blocks.m;
    let k = if with_lag { 3 } else { 2 };
    let mut z = DMatrix::<f64>::zeros(m, k);
    let mut wsum = 0.0;
    let mut lsum = 0.0;
    let mut lmax = 0.0f64;
    for i in 0..m {
        let t1 = blocks.block1.start + i;
        let t2 = blocks.block2.start + i;
        z[(i, 0)] = kernel.psi(e[t1] - alpha, tau);
        let psi2 = kernel.psi(e[t2] - alpha, tau);
        let w = weight(data.x_lag[t2]);
        wsum += w;
        z[(i, 1)] = psi2 * w;
        if with_lag {
            let lag = data.y_lag.as_ref().expect("dynamic view")[t2] - beta * data.x_lag[t2];
            lsum += lag;
            lmax = lmax.max(lag.abs());
            z[(i, 2)] = psi2 * lag;
        }
    }
    let mut weight_means = vec![wsum / m as f64];
    if with_lag {
        weight_means.push(lsum / m as f64);
    }
    ScorePanel {
        z,
        blocks,
        weight_means,
        max_abs_lag_weight: with_lag.then_some(lmax),
    }
}

/// Outcome of the inner Lagrange-multiplier problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub lambda: Vec<f64>,
    pub converged: bool,
    /// All scores were zero; `lambda = 0` trivially.
    pub degenerate: bool,
    pub iterations: usize,
    /// Infinity norm of `sum_t z_t / (1 + lambda' z_t)` at the returned `lambda`.
    pub foc_residual: f64,
}

/// Owen's pseudo-logarithm: `log` above `eps`, its quadratic extension below.
#[inline]
fn log_star(y: f64, eps: f64) -> (f64, f64, f64) {
    if y >= eps {
        (y.ln(), 1.0 / y, -1.0 / (y * y))
    } else {
        let r = y / eps;
        (
            eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r,
            2.0 / eps - y / (eps * eps),
            -1.0 / (eps * eps),
        )
    }
}

fn dual_value(z: &DMatrix<f64>, lambda: &DVector<f64>, eps: f64) -> f64 {
    (0..z.nrows())
        .map(|t| log_star(1.0 + z.row(t).dot(&lambda.transpose()), eps).0)
        .sum()
}

/// Maximizes `sum_t log*(1 + lambda' z_t)` by damped Newton. `converged` is
/// false when the maximizer leaves the region where `log* = log`, which is
/// what happens when zero is not inside the convex hull of the rows.
pub fn solve_lambda(z: &DMatrix<f64>) -> Result<LambdaSolution> {
    let (n, k) = z.shape();
    if n == 0 || k == 0 {
        return Err(invalid("score matrix is empty"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(invalid("score matrix has non-finite entries"));
    }
    if z.iter().all(|&v| v == 0.0) {
        return Ok(LambdaSolution {
            lambda: vec![0.0; k],
            converged: true,
            degenerate: true,
            iterations: 0,
            foc_residual: 0.0,
        });
    }
    let eps = 1.0 / n as f64;
    // The stopping rule is applied to the mean estimating equation in units
    // of the largest score, which makes it invariant to rescaling `z`.
    let grad_scale = n as f64 * z.amax();
    let mut lambda = DVector::<f64>::zeros(k);
    let mut value = dual_value(z, &lambda, eps);
    let mut iterations = 0;
    let mut grad_norm;
    let mut prev_grad_norm = f64::INFINITY;
    loop {
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for t in 0..n {
            let row = z.row(t);
            let arg = 1.0 + row.dot(&lambda.transpose());
            let (_, d1, d2) = log_star(arg, eps);
            for a in 0..k {
                grad[a] += d1 * row[a];
                for b in 0..=a {
                    hess[(a, b)] += d2 * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        grad_norm = grad.amax() / grad_scale;
        let stalled = grad_norm < NEWTON_GRAD_TOL && grad_norm > 0.5 * prev_grad_norm;
        if grad_norm < NEWTON_POLISH_TOL || stalled || iterations >= NEWTON_MAX_ITER {
            break;
        }
        prev_grad_norm = grad_norm;
        iterations += 1;
        let neg_hess = -hess;
        let step = match neg_hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                return Err(QprError::Singular(
                    "score second-moment matrix is singular".into(),
                ))
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &lambda + &step * scale;
            let v = dual_value(z, &trial, eps);
            if v >= value - 1e-14 * (1.0 + value.abs()) {
                let stalled = v <= value;
                lambda = trial;
                value = v;
                accepted = !stalled || scale == 1.0;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let inside = (0..n).all(|t| 1.0 + z.row(t).dot(&lambda.transpose()) >= eps);
    // With zero outside the hull the dual is unbounded above and Newton
    // walks `lambda` off to infinity while the gradient decays like
    // `1 / |lambda|`; the implied weights then no longer sum to one.
    let mass: f64 = el_probabilities(z, lambda.as_slice()).iter().sum();
    let foc = foc_residual(z, lambda.as_slice());
    Ok(LambdaSolution {
        lambda: lambda.iter().copied().collect(),
        converged: inside && grad_norm < NEWTON_GRAD_TOL && (mass - 1.0).abs() < 1e-8,
        degenerate: false,
        iterations,
        foc_residual: foc,
    })
}

/// `|| sum_t z_t / (1 + lambda' z_t) ||_inf`
pub fn foc_residual(z: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let lam = DVector::from_column_slice(lambda);
    let mut acc = DVector::<f64>::zeros(z.ncols());
    for t in 0..z.nrows() {
        let row = z.row(t);
        let d = 1.0 + row.dot(&lam.transpose());
        acc += row.transpose() / d;
    }
    acc.amax()
}

/// Implied observation weights `p_t = 1 / (n (1 + lambda' z_t))`.
pub fn el_probabilities(z: &DMatrix<f64>, lambda: &[f64]) -> Vec<f64> {
    let lam = DVector::from_column_slice(lambda);
    let n = z.nrows() as f64;
    (0..z.nrows())
        .map(|t| 1.0 / (n * (1.0 + z.row(t).dot(&lam.transpose()))))
        .collect()
}

/// Sample second-moment matrix `(1/n) sum_t z_t z_t'`.
pub fn score_covariance(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.transpose() * z / z.nrows() as f64
}

/// `-2 log` EL ratio of a score matrix for a zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ElStatistic {
    pub statistic: f64,
    pub lambda: Vec<f64>,
    pub converged: bool,
}

pub fn el_statistic(z: &DMatrix<f64>) -> Result<ElStatistic> {
    let sol = solve_lambda(z)?;
    if !sol.converged {
        return Ok(ElStatistic {
            statistic: f64::INFINITY,
            lambda: sol.lambda,
            converged: false,
        });
    }
    let lam = DVector::from_column_slice(&sol.lambda);
    let stat: f64 = 2.0
        * (0..z.nrows())
            .map(|t| (1.0 + z.row(t).dot(&lam.transpose())).ln())
            .sum::<f64>();
    Ok(ElStatistic {
        statistic: stat.max(0.0),
        lambda: sol.lambda,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElConfig {
    /// Use this intercept instead of profiling it from block one.
    #[serde(default)]
    pub known_alpha: Option<f64>,
    #[serde(default)]
    pub kernel: ScoreKernel,
    /// Slope at which the lag weight `y_{t-1} - beta x_{t-1}` is evaluated;
    /// `None` uses the hypothesized slope.
    #[serde(default)]
    pub lag_weight_beta: Option<f64>,
}

/// EL rows actually fed to the multiplier problem, with the intercept used.
#[derive(Debug, Clone, PartialEq)]
pub struct ElRows {
    pub rows: DMatrix<f64>,
    pub alpha: f64,
    pub panel: ScorePanel,
}

pub fn el_rows(
    data: &RegressionData,
    tau: QuantileLevel,
    beta0: f64,
    gamma0: Option<f64>,
    config: &ElConfig,
) -> Result<ElRows> {
    let blocks = split_indices(data.len())?;
    if gamma0.is_some() && !data.is_dynamic() {
        return Err(invalid("a lag coefficient needs the dynamic regression view"));
    }
    let e = partial_residuals(data, beta0, gamma0);
    let alpha = match config.known_alpha {
        Some(a) => a,
        None => block_quantile(&e[blocks.block1.clone()], tau),
    };
    let lag_beta = config.lag_weight_beta.unwrap_or(beta0);
    let panel = build_panel(data, tau, alpha, lag_beta, gamma0.is_some(), &e, blocks, config.kernel);
    let rows = if config.known_alpha.is_some() {
        panel.slope_columns()
    } else {
        panel.orthogonalized()
    };
    Ok(ElRows { rows, alpha, panel })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElResult {
    pub statistic: f64,
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub dof: u32,
    pub p_value: f64,
    pub alpha: f64,
}

/// EL log ratio at `(beta0[, gamma0])`; `gamma0 = None` means a static model.
pub fn el_log_ratio(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    beta0: f64,
    gamma0: Option<f64>,
    config: &ElConfig,
) -> Result<ElResult> {
    let data = RegressionData::new(sample, gamma0.is_some());
    el_log_ratio_on(&data, tau, beta0, gamma0, config)
}

pub fn el_log_ratio_on(
    data: &RegressionData,
    tau: QuantileLevel,
    beta0: f64,
    gamma0: Option<f64>,
    config: &ElConfig,
) -> Result<ElResult> {
    let rows = el_rows(data, tau, beta0, gamma0, config)?;
    let stat = el_statistic(&rows.rows)?;
    let dof = rows.rows.ncols() as u32;
    let p_value = crate::stats::DistributionRef::chi_square(dof)?.survival(stat.statistic)?;
    Ok(ElResult {
        statistic: stat.statistic,
        lambda: stat.lambda,
        converged: stat.converged,
        dof,
        p_value,
        alpha: rows.alpha,
    })
}

pub(crate) fn ensure_regressor_varies(x: &[f64]) -> Result<()> {
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        return Err(QprError::DegenerateRegressor(
            "predictor is constant over the sample".into(),
        ));
    }
    Ok(())
}

/// Settings for [`el_test`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElTestConfig {
    /// Include `y_{t-1}` in the model. Forced on for hypotheses about `gamma`.
    pub dynamic: bool,
    pub level: f64,
    #[serde(flatten)]
    pub el: ElConfig,
}

impl Default for ElTestConfig {
    fn default() -> Self {
        Self {
            dynamic: true,
            level: 0.05,
            el: ElConfig::default(),
        }
    }
}

/// Minimizes `f` over `[lo, hi]`: grid scan, then golden-section refinement
/// around the best grid point. Returns `(argmin, min)`.
fn profile_minimize<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) -> (f64, f64) {
    let step = (hi - lo) / (PROFILE_GRID - 1) as f64;
    let mut best = (lo, f64::INFINITY);
    let mut best_i = 0;
    for i in 0..PROFILE_GRID {
        let p = lo + step * i as f64;
        let v = f(p);
        if v < best.1 {
            best = (p, v);
            best_i = i;
        }
    }
    if !best.1.is_finite() {
        return best;
    }
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = lo + step * (best_i + 1).min(PROFILE_GRID - 1) as f64;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..PROFILE_GOLDEN_ITER {
        if fc <= fd {
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
    for (p, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (p, v);
        }
    }
    best
}

/// Bracket `estimate +/- 5 se` for a profiled coefficient.
fn profile_bracket(data: &RegressionData, tau: QuantileLevel, column: usize) -> Result<(f64, f64)> {
    let fit = fit_self_weighted(data, tau)?;
    let design = regression_design(data);
    let w = self_weights(&data.x_lag);
    let se = sandwich_standard_errors(&design, &fit, Some(&w))
        .ok()
        .map(|s| s[column])
        .filter(|s| s.is_finite() && *s > 0.0)
        .unwrap_or(1.0);
    let centre = fit.coefficients[column];
    Ok((centre - 5.0 * se, centre + 5.0 * se))
}

/// EL test of `hypothesis` with the chi-square reference law.
pub fn el_test(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    hypothesis: Hypothesis,
    config: &ElTestConfig,
) -> Result<TestResult> {
    let dynamic = config.dynamic || hypothesis.needs_dynamic();
    let data = RegressionData::new(sample, dynamic);
    el_test_on(&data, tau, hypothesis, config)
}

pub fn el_test_on(
    data: &RegressionData,
    tau: QuantileLevel,
    hypothesis: Hypothesis,
    config: &ElTestConfig,
) -> Result<TestResult> {
    split_indices(data.len())?;
    ensure_regressor_varies(&data.x_lag)?;
    if hypothesis.needs_dynamic() && !data.is_dynamic() {
        return Err(invalid(format!(
            "hypothesis {} needs the dynamic model",
            hypothesis.as_str()
        )));
    }
    let el = &config.el;
    match (hypothesis, data.is_dynamic()) {
        (Hypothesis::BetaOnly, false) => {
            let r = el_log_ratio_on(data, tau, 0.0, None, el)?;
            TestResult::asymptotic(Method::El, hypothesis, r.statistic, 1, r.converged, config.level)
        }
        (Hypothesis::Joint, _) => {
            let r = el_log_ratio_on(data, tau, 0.0, Some(0.0), el)?;
            TestResult::asymptotic(Method::El, hypothesis, r.statistic, 2, r.converged, config.level)
        }
        (Hypothesis::BetaOnly, true) => {
            let (lo, hi) = profile_bracket(data, tau, 2)?;
            let (g, stat) = profile_minimize(lo, hi, |g| {
                el_log_ratio_on(data, tau, 0.0, Some(g), el).map_or(f64::INFINITY, |r| r.statistic)
            });
            let mut res = TestResult::asymptotic(Method::El, hypothesis, stat, 1, stat.is_finite(), config.level)?;
            res.profiled = Some(g);
            Ok(res)
        }
        (Hypothesis::GammaOnly, _) => {
            let (lo, hi) = profile_bracket(data, tau, 1)?;
            let (b, stat) = profile_minimize(lo, hi, |b| {
                el_log_ratio_on(data, tau, b, Some(0.0), el).map_or(f64::INFINITY, |r| r.statistic)
            });
            let mut res = TestResult::asymptotic(Method::El, hypothesis, stat, 1, stat.is_finite(), config.level)?;
            res.profiled = Some(b);
            Ok(res)
        }
    }
}

/// Grid points `(beta, gamma)` whose joint EL statistic is within the
/// chi-square(2) quantile at `level`.
pub fn el_confidence_region(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    grid: &[(f64, f64)],
    level: f64,
    config: &ElConfig,
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(invalid("confidence-region grid is empty"));
    }
    let threshold = chi_square_quantile(level, 2)?;
    let data = RegressionData::new(sample, true);
    let mut out = Vec::new();
    for &(b, g) in grid {
        let r = el_log_ratio_on(&data, tau, b, Some(g), config)?;
        if r.statistic <= threshold {
            out.push((b, g));
        }
    }
    Ok(out)
}

/// EL statistic at every grid point (joint, dynamic model).
pub fn el_surface(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    grid: &[(f64, f64)],
    config: &ElConfig,
) -> Result<Vec<f64>> {
    let data = RegressionData::new(sample, true);
    grid.iter()
        .map(|&(b, g)| el_log_ratio_on(&data, tau, b, Some(g), config).map(|r| r.statistic))
        .collect()
}
