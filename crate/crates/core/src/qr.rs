//! Linear quantile regression by exact check-loss minimization.
//!
//! The solver warms up with iteratively reweighted least squares on a
//! smoothed check loss, snaps to a nearby basic solution (an exact fit
//! through `p` observations) and then walks between adjacent basic
//! solutions along strictly descending edges until no edge descends. The
//! final basis carries its own optimality certificate. A brute-force
//! enumeration of all basic solutions is kept for small problems as an
//! independent oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QprError, Result};
use crate::sample::RegressionData;
use crate::stats::{density_at_zero, Bandwidth, QuantileLevel};

/// Result of a quantile-regression fit. Coefficients follow the design
/// column order (intercept, x-lag slope, optional y-lag slope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub tau: QuantileLevel,
    pub objective: f64,
    pub exact_fit_count: usize,
    /// Observations interpolated by the returned basic solution.
    pub basis: Vec<usize>,
    /// Set when an edge out of the optimal vertex is flat, so the minimizer
    /// is not unique.
    pub non_unique: bool,
}

#[inline]
fn rho(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

/// Weighted check loss `sum_t w_t * r_t * (tau - 1{r_t <= 0})`.
pub fn check_loss(residuals: &[f64], tau: QuantileLevel, weights: Option<&[f64]>) -> Result<f64> {
    if let Some(w) = weights {
        if w.len() != residuals.len() {
            return Err(invalid(format!(
                "weights have length {} but residuals have length {}",
                w.len(),
                residuals.len()
            )));
        }
    }
    Ok(weighted_loss(residuals, tau.value(), weights))
}

fn weighted_loss(residuals: &[f64], tau: f64, weights: Option<&[f64]>) -> f64 {
    match weights {
        None => residuals.iter().map(|&r| rho(r, tau)).sum(),
        Some(w) => residuals.iter().zip(w).map(|(&r, &wt)| wt * rho(r, tau)).sum(),
    }
}

/// Integrated biweight kernel: 0 below -1, 1 above 1.
pub fn integrated_biweight(s: f64) -> f64 {
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let s3 = s * s * s;
        0.5 + (15.0 / 16.0) * (s - (2.0 / 3.0) * s3 + 0.2 * s3 * s * s)
    }
}

/// Smooth stand-in for `1{u <= 0}` with bandwidth `h`.
pub fn smoothed_indicator(u: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("smoothing bandwidth must be positive, got {h}")));
    }
    Ok(integrated_biweight(-u / h))
}

/// Default smoothing bandwidth `(p + 1) / n^(1/3)`.
pub fn default_smoothing_bandwidth(p: usize, n: usize) -> f64 {
    (p as f64 + 1.0) / (n as f64).cbrt()
}

fn validate_inputs(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: Option<&[f64]>,
) -> Result<()> {
    let (n, p) = design.shape();
    if p == 0 {
        return Err(invalid("design has no columns"));
    }
    if response.len() != n {
        return Err(invalid(format!(
            "response has length {} but design has {n} rows",
            response.len()
        )));
    }
    if n <= p {
        return Err(invalid(format!("need more observations ({n}) than parameters ({p})")));
    }
    if design.iter().chain(response).any(|v| !v.is_finite()) {
        return Err(invalid("design and response must be finite"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(invalid("weights must match the number of observations"));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
    }
    Ok(())
}

/// Numerical rank through a column-pivoted QR factorization.
pub fn numerical_rank(design: &DMatrix<f64>) -> usize {
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    if k == 0 {
        return 0;
    }
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    let tol = lead * 1e-10 * (design.nrows().max(design.ncols()) as f64);
    (0..k).filter(|&i| r[(i, i)].abs() > tol).count()
}

fn weighted_rows(design: &DMatrix<f64>, weights: Option<&[f64]>) -> DMatrix<f64> {
    match weights {
        None => design.clone(),
        Some(w) => {
            let keep: Vec<usize> = (0..design.nrows()).filter(|&i| w[i] > 0.0).collect();
            design.select_rows(keep.iter())
        }
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    w: Option<&'a [f64]>,
    tau: f64,
    tol: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    #[inline]
    fn weight(&self, t: usize) -> f64 {
        self.w.map_or(1.0, |w| w[t])
    }

    #[inline]
    fn row_dot(&self, t: usize, v: &[f64]) -> f64 {
        (0..self.p()).map(|j| self.x[(t, j)] * v[j]).sum()
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|t| self.y[t] - self.row_dot(t, theta)).collect()
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(basis.iter())
    }

    fn irls_start(&self) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut a = vec![1.0; n];
        let mut theta = vec![0.0; p];
        let scale = {
            let mean = self.y.iter().sum::<f64>() / n as f64;
            let sd = (self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        };
        let mut eps = scale;
        for iter in 0..12 {
            let mut xtx = DMatrix::<f64>::zeros(p, p);
            let mut xty = DVector::<f64>::zeros(p);
            for t in 0..n {
                let wt = self.weight(t) * a[t];
                if wt == 0.0 {
                    continue;
                }
                for j in 0..p {
                    let xj = self.x[(t, j)];
                    xty[j] += wt * xj * self.y[t];
                    for k in 0..=j {
                        xtx[(j, k)] += wt * xj * self.x[(t, k)];
                    }
                }
            }
            for j in 0..p {
                for k in 0..j {
                    xtx[(k, j)] = xtx[(j, k)];
                }
            }
            let Some(sol) = xtx.lu().solve(&xty) else {
                break;
            };
            let next: Vec<f64> = sol.iter().copied().collect();
            let shift: f64 = next.iter().zip(&theta).map(|(a, b)| (a - b).abs()).sum();
            theta = next;
            if iter > 0 && shift < 1e-9 * scale {
                break;
            }
            let r = self.residuals(&theta);
            for t in 0..n {
                let c = if r[t] > 0.0 { self.tau } else { 1.0 - self.tau };
                a[t] = c / r[t].abs().max(eps);
            }
            eps = (eps / 10.0).max(1e-10 * scale);
        }
        theta
    }

    /// Picks `p` observations with the smallest residuals whose rows are
    /// linearly independent.
    fn initial_basis(&self, theta: &[f64]) -> Result<Vec<usize>> {
        let (n, p) = (self.n(), self.p());
        let r = self.residuals(theta);
        let mut order: Vec<usize> = (0..n).filter(|&t| self.weight(t) > 0.0).collect();
        order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
        let mut basis = Vec::with_capacity(p);
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
        for &t in &order {
            let mut v: Vec<f64> = (0..p).map(|j| self.x[(t, j)]).collect();
            let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            for q in &ortho {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 * norm0 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                ortho.push(v);
                basis.push(t);
                if basis.len() == p {
                    return Ok(basis);
                }
            }
        }
        Err(QprError::RankDeficient {
            rank: basis.len(),
            cols: p,
        })
    }

    fn solve_basis(&self, basis: &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let b = self.basis_matrix(basis);
        let inv = b
            .try_inverse()
            .ok_or_else(|| QprError::Singular("basis matrix".into()))?;
        let yb = DVector::from_iterator(basis.len(), basis.iter().map(|&t| self.y[t]));
        let theta = &inv * yb;
        Ok((theta.iter().copied().collect(), inv))
    }

    fn residuals_on_basis(&self, theta: &[f64], basis: &[usize]) -> Vec<f64> {
        let mut r = self.residuals(theta);
        for &t in basis {
            r[t] = 0.0;
        }
        r
    }

    /// Directional derivatives of the loss along the `2p` edges leaving
    /// `basis`, as `(derivative, basis position, sign, direction)`.
    fn edge_derivatives(
        &self,
        basis: &[usize],
        inv: &DMatrix<f64>,
        r: &[f64],
    ) -> Vec<(f64, usize, f64, Vec<f64>)> {
        let (n, p) = (self.n(), self.p());
        let tau = self.tau;
        let mut in_basis = vec![false; n];
        for &t in basis {
            in_basis[t] = true;
        }
        let mut g = vec![0.0; p];
        let mut ties = Vec::new();
        for t in 0..n {
            if in_basis[t] {
                continue;
            }
            let wt = self.weight(t);
            if wt == 0.0 {
                continue;
            }
            if r[t].abs() <= self.tol {
                ties.push(t);
                continue;
            }
            let slope = if r[t] > 0.0 { tau } else { tau - 1.0 };
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += wt * slope * self.x[(t, j)];
            }
        }
        let mut out = Vec::with_capacity(2 * p);
        for j in 0..p {
            for sigma in [1.0, -1.0] {
                let d: Vec<f64> = (0..p).map(|k| sigma * inv[(k, j)]).collect();
                let mut deriv = -g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
                for &t in &ties {
                    deriv += self.weight(t) * rho(-self.row_dot(t, &d), tau);
                }
                deriv += self.weight(basis[j]) * rho(-sigma, tau);
                out.push((deriv, j, sigma, d));
            }
        }
        out
    }

    /// Exact line search along `d`; returns the entering observation.
    fn line_search(&self, basis: &[usize], r: &[f64], d: &[f64], slope0: f64) -> Result<usize> {
        let n = self.n();
        let mut in_basis = vec![false; n];
        for &t in basis {
            in_basis[t] = true;
        }
        let mut kinks: Vec<(f64, f64, usize)> = Vec::new();
        for t in 0..n {
            if in_basis[t] || r[t].abs() <= self.tol {
                continue;
            }
            let wt = self.weight(t);
            if wt == 0.0 {
                continue;
            }
            let c = self.row_dot(t, d);
            if c == 0.0 {
                continue;
            }
            let s = r[t] / c;
            if s > 0.0 {
                kinks.push((s, wt * c.abs(), t));
            }
        }
        kinks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        for (_, jump, t) in kinks {
            slope += jump;
            if slope >= 0.0 {
                return Ok(t);
            }
        }
        Err(QprError::Numerical(
            "check loss unbounded below along an edge".into(),
        ))
    }
}

/// Minimizes the (weighted) check loss of `response - design * theta`.
pub fn fit_quantile_regression(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: QuantileLevel,
    weights: Option<&[f64]>,
) -> Result<QuantileFit> {
    validate_inputs(design, response, weights)?;
    let p = design.ncols();
    let active = weighted_rows(design, weights);
    let rank = if active.nrows() < p { active.nrows().min(numerical_rank(&active)) } else { numerical_rank(&active) };
    if rank < p {
        return Err(QprError::RankDeficient { rank, cols: p });
    }
    let scale = response.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let prob = Problem {
        x: design,
        y: response,
        w: weights,
        tau: tau.value(),
        tol: 1e-11 * scale,
    };
    let start = prob.irls_start();
    let mut basis = prob.initial_basis(&start)?;
    let max_iter = 50 * design.nrows() + 100;
    for _ in 0..max_iter {
        let (theta, inv) = prob.solve_basis(&basis)?;
        let r = prob.residuals_on_basis(&theta, &basis);
        let edges = prob.edge_derivatives(&basis, &inv, &r);
        let deriv_tol = 1e-12 * scale * (design.nrows() as f64);
        let best = edges
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("p >= 1");
        let (deriv, j, _, ref d) = edges[best];
        if deriv >= -deriv_tol {
            let non_unique = edges.iter().any(|e| e.0 <= deriv_tol);
            return Ok(finish(&prob, theta, r, tau, basis, non_unique));
        }
        let entering = prob.line_search(&basis, &r, d, deriv)?;
        basis[j] = entering;
    }
    Err(QprError::Numerical(
        "quantile regression did not reach an optimal vertex".into(),
    ))
}

fn finish(
    prob: &Problem<'_>,
    theta: Vec<f64>,
    residuals: Vec<f64>,
    tau: QuantileLevel,
    basis: Vec<usize>,
    non_unique: bool,
) -> QuantileFit {
    let objective = weighted_loss(&residuals, prob.tau, prob.w);
    let exact_fit_count = residuals.iter().filter(|r| r.abs() <= prob.tol).count();
    QuantileFit {
        coefficients: theta,
        residuals,
        tau,
        objective,
        exact_fit_count,
        basis,
        non_unique,
    }
}

/// Column-wise subgradient check: for every column `j`,
/// `|sum_{r_t != 0} w_t d_tj psi(r_t)| <= sum_{r_t = 0} w_t |d_tj| max(tau, 1 - tau)`.
pub fn satisfies_subgradient_condition(
    design: &DMatrix<f64>,
    fit: &QuantileFit,
    weights: Option<&[f64]>,
    tol: f64,
) -> bool {
    let tau = fit.tau.value();
    let cap = tau.max(1.0 - tau);
    let zero_tol = 1e-9 * fit.residuals.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    (0..design.ncols()).all(|j| {
        let mut lhs = 0.0;
        let mut slack = 0.0;
        for (t, &r) in fit.residuals.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[t]);
            let d = design[(t, j)];
            if r.abs() <= zero_tol {
                slack += w * d.abs() * cap;
            } else {
                lhs += w * d * if r > 0.0 { tau } else { tau - 1.0 };
            }
        }
        lhs.abs() <= slack + tol
    })
}

/// Next `k`-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates every exact-fit basic solution and returns the one with the
/// smallest check loss; ties go to the lexicographically first index set.
pub fn brute_force_qr_oracle(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: QuantileLevel,
    weights: Option<&[f64]>,
) -> Result<QuantileFit> {
    validate_inputs(design, response, weights)?;
    let (n, p) = design.shape();
    if n > 14 {
        return Err(invalid(format!("brute-force oracle is limited to n <= 14, got {n}")));
    }
    let prob = Problem {
        x: design,
        y: response,
        w: weights,
        tau: tau.value(),
        tol: 1e-11 * response.iter().fold(1.0f64, |m, v| m.max(v.abs())),
    };
    let mut idx: Vec<usize> = (0..p).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    loop {
        let b = prob.basis_matrix(&idx);
        let lu = b.clone().lu();
        let det = lu.determinant();
        let size = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if det.abs() > 1e-12 * size.powi(p as i32) {
            let yb = DVector::from_iterator(p, idx.iter().map(|&t| response[t]));
            if let Some(sol) = lu.solve(&yb) {
                let theta: Vec<f64> = sol.iter().copied().collect();
                let r = prob.residuals_on_basis(&theta, &idx);
                let loss = weighted_loss(&r, prob.tau, weights);
                let better = match &best {
                    None => true,
                    Some((b, _, _)) => loss < *b - 1e-12 * b.abs().max(1.0),
                };
                if better {
                    best = Some((loss, theta, idx.clone()));
                }
            }
        }
        if !next_combination(&mut idx, n) {
            break;
        }
    }
    let (_, theta, basis) = best.ok_or_else(|| QprError::Singular("every p-subset is singular".into()))?;
    let r = prob.residuals_on_basis(&theta, &basis);
    Ok(finish(&prob, theta, r, tau, basis, false))
}

/// Design matrix `(1, x_{t-1}[, y_{t-1}])` for a regression view.
pub fn regression_design(data: &RegressionData) -> DMatrix<f64> {
    let n = data.len();
    let p = if data.is_dynamic() { 3 } else { 2 };
    DMatrix::from_fn(n, p, |t, j| match j {
        0 => 1.0,
        1 => data.x_lag[t],
        _ => data.y_lag.as_ref().expect("dynamic")[t],
    })
}

/// Observation weights `1 / sqrt(1 + x_{t-1}^2)`; with them the slope score
/// becomes `psi * x / sqrt(1 + x^2)`.
pub fn self_weights(x_lag: &[f64]) -> Vec<f64> {
    x_lag.iter().map(|x| 1.0 / (1.0 + x * x).sqrt()).collect()
}

/// Self-weighted quantile regression of `y_t` on `(1, x_{t-1}[, y_{t-1}])`.
pub fn fit_self_weighted(data: &RegressionData, tau: QuantileLevel) -> Result<QuantileFit> {
    let design = regression_design(data);
    let w = self_weights(&data.x_lag);
    fit_quantile_regression(&design, &data.y, tau, Some(&w))
}

/// Sandwich standard errors `H^-1 J H^-1` with `H = f(0) X'WX`,
/// `J = tau (1 - tau) X'W^2X` and a Hall-Sheather density estimate.
pub fn sandwich_standard_errors(
    design: &DMatrix<f64>,
    fit: &QuantileFit,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let (n, p) = design.shape();
    let f = density_at_zero(&fit.residuals, Bandwidth::HallSheather(fit.tau))?;
    let mut h = DMatrix::<f64>::zeros(p, p);
    let mut j = DMatrix::<f64>::zeros(p, p);
    for t in 0..n {
        let w = weights.map_or(1.0, |w| w[t]);
        for a in 0..p {
            for b in 0..p {
                let xx = design[(t, a)] * design[(t, b)];
                h[(a, b)] += w * xx;
                j[(a, b)] += w * w * xx;
            }
        }
    }
    let h_inv = (h * f)
        .try_inverse()
        .ok_or_else(|| QprError::Singular("weighted Gram matrix".into()))?;
    let cov = &h_inv * (j * fit.tau.score_variance()) * &h_inv;
    Ok((0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
}
