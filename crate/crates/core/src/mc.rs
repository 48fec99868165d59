//! Monte Carlo size and power experiments over parameter grids.
//!
//! Every replication draws its sample from a seed derived from the master
//! seed, the data-generating coordinates of its cell *except* the slope
//! `beta`, and the replication index. Cells that differ only in `beta` (or in
//! the test applied) therefore see the same innovations, which sharpens
//! size/power comparisons. Output rows are sorted by coordinates, so tables
//! do not depend on scheduling or worker count.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_test, BootstrapConfig, NullSpec, WeightFamily};
use crate::dgp::{simulate_system, DgpConfig, InnovationFamily, InnovationSpec, PersistenceSpec};
use crate::el::{el_test, ElTestConfig};
use crate::error::{invalid, Result};
use crate::inference::{Calibration, Hypothesis, Method, TestResult};
use crate::ivx::{ivx_qr_test, IvxConfig, IvxTestConfig};
use crate::parallel::{map_indices, with_jobs, Execution};
use crate::seed::{coord_bits, derive_seed, fnv1a};
use crate::stats::QuantileLevel;

/// A cell is flagged when more than this share of replications failed.
pub const UNRELIABLE_FAILURE_SHARE: f64 = 0.2;

fn default_gamma_exp() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_levels() -> Vec<f64> {
    vec![0.05]
}
fn default_bootstrap() -> usize {
    399
}

/// Grid specification, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McGrid {
    pub n: Vec<usize>,
    pub c: Vec<f64>,
    #[serde(default = "default_gamma_exp")]
    pub gamma_exp: f64,
    pub rho_uv: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma_lag: Vec<f64>,
    pub innovations: Vec<InnovationFamily>,
    #[serde(default = "default_one")]
    pub sigma_uu: f64,
    #[serde(default = "default_one")]
    pub sigma_vv: f64,
    pub tau: Vec<f64>,
    pub methods: Vec<Method>,
    pub calibration: Vec<Calibration>,
    pub hypothesis: Hypothesis,
    #[serde(default = "default_true")]
    pub dynamic: bool,
    /// Recentre the errors so the tested quantile of `u_t` is zero.
    #[serde(default = "default_true")]
    pub quantile_shift: bool,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_replications: usize,
    #[serde(default)]
    pub bootstrap_weights: WeightFamily,
    #[serde(default)]
    pub ivx: IvxConfig,
}

impl McGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let axes: [(&str, usize); 13] = [
            ("n", self.n.len()),
            ("c", self.c.len()),
            ("rho_uv", self.rho_uv.len()),
            ("alpha", self.alpha.len()),
            ("mu", self.mu.len()),
            ("beta", self.beta.len()),
            ("gamma_lag", self.gamma_lag.len()),
            ("innovations", self.innovations.len()),
            ("tau", self.tau.len()),
            ("methods", self.methods.len()),
            ("calibration", self.calibration.len()),
            ("levels", self.levels.len()),
            ("replications", self.replications.min(1)),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, len)| *len == 0) {
            return Err(invalid(format!("grid axis `{name}` is empty")));
        }
        if self.replications < 200 {
            return Err(invalid(format!(
                "grid needs at least 200 replications, got {}",
                self.replications
            )));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(invalid(format!("nominal level {l} is outside (0, 1)")));
        }
        for &t in &self.tau {
            QuantileLevel::new(t)?;
        }
        if self.hypothesis.needs_dynamic() && !self.dynamic {
            return Err(invalid(format!(
                "hypothesis {} needs the dynamic model",
                self.hypothesis.as_str()
            )));
        }
        if self.calibration.contains(&Calibration::Bootstrap) {
            BootstrapConfig::new(self.bootstrap_replications, 0).validate()?;
        }
        self.ivx.validate()?;
        for cell in self.cells() {
            cell.dgp()?.validate()?;
        }
        Ok(())
    }

    /// Every cell of the Cartesian product, in coordinate order.
    pub fn cells(&self) -> Vec<McCell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &c in &self.c {
                for &rho_uv in &self.rho_uv {
                    for &alpha in &self.alpha {
                        for &mu in &self.mu {
                            for &beta in &self.beta {
                                for &gamma_lag in &self.gamma_lag {
                                    for &innovation in &self.innovations {
                                        for &tau in &self.tau {
                                            for &method in &self.methods {
                                                for &calibration in &self.calibration {
                                                    out.push(McCell {
                                                        coords: CellCoords {
                                                            n,
                                                            c,
                                                            rho_uv,
                                                            alpha,
                                                            mu,
                                                            beta,
                                                            gamma_lag,
                                                            innovation,
                                                            tau,
                                                            method,
                                                            calibration,
                                                        },
                                                        gamma_exp: self.gamma_exp,
                                                        sigma_uu: self.sigma_uu,
                                                        sigma_vv: self.sigma_vv,
                                                        hypothesis: self.hypothesis,
                                                        dynamic: self.dynamic,
                                                        quantile_shift: self.quantile_shift,
                                                        replications: self.replications,
                                                        master_seed: self.master_seed,
                                                        levels: self.levels.clone(),
                                                        bootstrap_replications: self.bootstrap_replications,
                                                        bootstrap_weights: self.bootstrap_weights,
                                                        ivx: self.ivx,
                                                    });
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Coordinates identifying a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoords {
    pub n: usize,
    pub c: f64,
    pub rho_uv: f64,
    pub alpha: f64,
    pub mu: f64,
    pub beta: f64,
    pub gamma_lag: f64,
    pub innovation: InnovationFamily,
    pub tau: f64,
    pub method: Method,
    pub calibration: Calibration,
}

pub fn innovation_label(family: &InnovationFamily) -> String {
    match family {
        InnovationFamily::Gaussian => "gaussian".into(),
        InnovationFamily::StudentT { dof } => format!("student_t({dof})"),
        InnovationFamily::CcArch { vartheta, x, yx } => format!(
            "cc_arch({vartheta};{},{};{},{})",
            x.omega, x.a1, yx.omega, yx.a1
        ),
        InnovationFamily::Degenerate => "degenerate".into(),
    }
}

impl CellCoords {
    fn order(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then(self.c.total_cmp(&other.c))
            .then(self.rho_uv.total_cmp(&other.rho_uv))
            .then(self.alpha.total_cmp(&other.alpha))
            .then(self.mu.total_cmp(&other.mu))
            .then(self.beta.total_cmp(&other.beta))
            .then(self.gamma_lag.total_cmp(&other.gamma_lag))
            .then(innovation_label(&self.innovation).cmp(&innovation_label(&other.innovation)))
            .then(self.tau.total_cmp(&other.tau))
            .then(self.method.cmp(&other.method))
            .then(self.calibration.cmp(&other.calibration))
    }
}

/// One fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub coords: CellCoords,
    pub gamma_exp: f64,
    pub sigma_uu: f64,
    pub sigma_vv: f64,
    pub hypothesis: Hypothesis,
    pub dynamic: bool,
    pub quantile_shift: bool,
    pub replications: usize,
    pub master_seed: u64,
    pub levels: Vec<f64>,
    pub bootstrap_replications: usize,
    pub bootstrap_weights: WeightFamily,
    pub ivx: IvxConfig,
}

impl McCell {
    pub fn dgp(&self) -> Result<DgpConfig> {
        let k = &self.coords;
        let persistence = PersistenceSpec {
            c: k.c,
            gamma_exp: self.gamma_exp,
            mu: k.mu,
            x0: 0.0,
        };
        let innovations = InnovationSpec {
            family: k.innovation,
            sigma_uu: self.sigma_uu,
            sigma_vv: self.sigma_vv,
            rho_uv: k.rho_uv,
        };
        let mut cfg = DgpConfig::new(k.n, persistence, innovations);
        cfg.alpha = k.alpha;
        cfg.beta = k.beta;
        cfg.gamma_lag = k.gamma_lag;
        cfg.quantile_shift = if self.quantile_shift {
            Some(QuantileLevel::new(k.tau)?)
        } else {
            None
        };
        Ok(cfg)
    }

    /// Seed of replication `r`: shared by cells that differ only in `beta`
    /// or in the test applied.
    pub fn replication_seed(&self, r: usize) -> u64 {
        let k = &self.coords;
        let label = innovation_label(&k.innovation);
        derive_seed(&[
            self.master_seed,
            k.n as u64,
            coord_bits(k.c),
            coord_bits(self.gamma_exp),
            coord_bits(k.rho_uv),
            coord_bits(k.alpha),
            coord_bits(k.mu),
            coord_bits(k.gamma_lag),
            fnv1a(label.as_bytes()),
            coord_bits(k.tau),
            coord_bits(self.sigma_uu),
            coord_bits(self.sigma_vv),
            r as u64,
        ])
    }

    fn run_one(&self, dgp: &DgpConfig, tau: QuantileLevel, r: usize) -> Option<TestResult> {
        let seed = self.replication_seed(r);
        let sample = simulate_system(dgp, seed).ok()?;
        let level = self.levels[0];
        let k = &self.coords;
        let res = match (k.method, k.calibration) {
            (Method::El, Calibration::Asymptotic) => el_test(
                &sample,
                tau,
                self.hypothesis,
                &ElTestConfig {
                    dynamic: self.dynamic,
                    level,
                    ..Default::default()
                },
            ),
            (Method::Ivx, Calibration::Asymptotic) => ivx_qr_test(
                &sample,
                tau,
                self.hypothesis,
                &IvxTestConfig {
                    ivx: self.ivx,
                    dynamic: self.dynamic,
                    level,
                },
            ),
            (method, Calibration::Bootstrap) => {
                let mut null = NullSpec::new(self.hypothesis, self.dynamic);
                null.ivx = self.ivx;
                let config = BootstrapConfig {
                    replications: self.bootstrap_replications,
                    weight_family: self.bootstrap_weights,
                    seed: derive_seed(&[seed, 0xb007]),
                    execution: Execution::Sequential,
                };
                bootstrap_test(&sample, tau, method, &null, &config, level)
            }
        };
        res.ok().filter(|t| t.converged && t.p_value.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRate {
    pub level: f64,
    /// Rejections over convergent replications.
    pub rejection_rate: f64,
    pub mc_std_error: f64,
    /// Rejections over all replications, failures counted as non-rejections.
    pub sensitivity_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCellResult {
    pub coords: CellCoords,
    pub hypothesis: Hypothesis,
    pub replications: usize,
    pub valid: usize,
    pub convergence_failures: usize,
    pub unreliable: bool,
    pub rates: Vec<LevelRate>,
    /// Not part of the emitted tables, which must not depend on timing.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl McCellResult {
    pub fn rate_at(&self, level: f64) -> Option<f64> {
        self.rates.iter().find(|r| r.level == level).map(|r| r.rejection_rate)
    }
}

/// `sqrt(p (1 - p) / R)`
pub fn mc_std_error(p: f64, replications: usize) -> f64 {
    (p * (1.0 - p) / replications as f64).sqrt()
}

/// Runs the `R` replications of `cell`; replications are spread over the
/// current thread pool when `exec` is parallel.
pub fn run_cell(cell: &McCell, exec: Execution) -> Result<McCellResult> {
    let start = Instant::now();
    let dgp = cell.dgp()?;
    dgp.validate()?;
    let tau = QuantileLevel::new(cell.coords.tau)?;
    let p_values: Vec<Option<f64>> = map_indices(cell.replications, exec, |r| {
        cell.run_one(&dgp, tau, r).map(|t| t.p_value)
    });
    let valid: Vec<f64> = p_values.iter().flatten().copied().collect();
    let failures = cell.replications - valid.len();
    let rates = cell
        .levels
        .iter()
        .map(|&level| {
            let rejections = valid.iter().filter(|&&p| p < level).count();
            let rate = if valid.is_empty() {
                f64::NAN
            } else {
                rejections as f64 / valid.len() as f64
            };
            LevelRate {
                level,
                rejection_rate: rate,
                mc_std_error: mc_std_error(rate, valid.len().max(1)),
                sensitivity_rate: rejections as f64 / cell.replications as f64,
            }
        })
        .collect();
    Ok(McCellResult {
        coords: cell.coords,
        hypothesis: cell.hypothesis,
        replications: cell.replications,
        valid: valid.len(),
        convergence_failures: failures,
        unreliable: failures as f64 > UNRELIABLE_FAILURE_SHARE * cell.replications as f64,
        rates,
        wall_time: start.elapsed(),
    })
}

/// Runs every cell of `grid` on `jobs` worker threads (`jobs <= 1` runs
/// sequentially) and returns the rows sorted by coordinates.
pub fn run_grid(grid: &McGrid, jobs: usize) -> Result<Vec<McCellResult>> {
    grid.validate()?;
    let cells = grid.cells();
    let mut rows = with_jobs(jobs, |exec| {
        cells
            .iter()
            .map(|cell| run_cell(cell, exec))
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by(|a, b| a.coords.order(&b.coords));
    Ok(rows)
}

/// Number of distinct replication streams in `grid` and whether any two
/// distinct (coordinates, replication) keys map to the same seed.
pub fn seed_collisions(grid: &McGrid) -> (usize, usize) {
    let mut keys = HashSet::new();
    let mut seeds = HashSet::new();
    let mut collisions = 0;
    for cell in grid.cells() {
        for r in 0..cell.replications {
            let seed = cell.replication_seed(r);
            let key = (
                cell.coords.n,
                coord_bits(cell.coords.c),
                coord_bits(cell.coords.rho_uv),
                coord_bits(cell.coords.alpha),
                coord_bits(cell.coords.mu),
                coord_bits(cell.coords.gamma_lag),
                innovation_label(&cell.coords.innovation),
                coord_bits(cell.coords.tau),
                r,
            );
            if keys.insert(key) && !seeds.insert(seed) {
                collisions += 1;
            }
        }
    }
    (seeds.len(), collisions)
}

fn header(levels: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "n", "c", "rho_uv", "alpha", "mu", "beta", "gamma_lag", "innovation", "tau", "method",
        "calibration", "hypothesis", "replications", "valid", "failures", "unreliable",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in levels {
        h.push(format!("reject_{l}"));
        h.push(format!("se_{l}"));
        h.push(format!("reject_all_{l}"));
    }
    h
}

fn record(row: &McCellResult) -> Vec<String> {
    let k = &row.coords;
    let mut out = vec![
        k.n.to_string(),
        k.c.to_string(),
        k.rho_uv.to_string(),
        k.alpha.to_string(),
        k.mu.to_string(),
        k.beta.to_string(),
        k.gamma_lag.to_string(),
        innovation_label(&k.innovation),
        k.tau.to_string(),
        k.method.as_str().to_string(),
        k.calibration.as_str().to_string(),
        row.hypothesis.as_str().to_string(),
        row.replications.to_string(),
        row.valid.to_string(),
        row.convergence_failures.to_string(),
        row.unreliable.to_string(),
    ];
    for r in &row.rates {
        out.push(format!("{:.6}", r.rejection_rate));
        out.push(format!("{:.6}", r.mc_std_error));
        out.push(format!("{:.6}", r.sensitivity_rate));
    }
    out
}

fn levels_of(rows: &[McCellResult]) -> Vec<f64> {
    rows.first()
        .map(|r| r.rates.iter().map(|x| x.level).collect())
        .unwrap_or_default()
}

/// RFC-4180 CSV of the result rows.
pub fn results_to_csv(rows: &[McCellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&levels_of(rows)))?;
    for row in rows {
        w.write_record(record(row))?;
    }
    let bytes = w.into_inner().map_err(|e| crate::QprError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Right-aligned text table.
pub fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, header);
    for r in rows {
        line(&mut out, r);
    }
    out
}

pub fn results_to_table(rows: &[McCellResult]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(record).collect();
    format_table(&header(&levels_of(rows)), &body)
}
