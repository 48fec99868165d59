//! Random-weight (multiplier) bootstrap calibration.
//!
//! Each replication multiplies the centred null-restricted score
//! contributions by `pi_t - 1`, where the `pi_t` are i.i.d. with mean and
//! variance one, and recomputes the statistic on the perturbed scores with the
//! nuisance parameters held at their restricted values. Centring is what
//! makes the replicated statistics mimic the null law: the perturbed scores
//! have mean zero and the same conditional second moments as the originals,
//! heteroskedastic or not.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::el::{el_rows, el_statistic, el_test_on, ElConfig, ElTestConfig};
use crate::error::{invalid, QprError, Result};
use crate::inference::{Calibration, Hypothesis, Method, TestResult};
use crate::ivx::{ivx_score_parts, IvxConfig, IvxTestConfig};
use crate::parallel::{map_indices, Execution};
use crate::sample::{RegressionData, TimeSeriesSample};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{sample_quantile_sorted, DistributionRef, QuantileLevel};

pub const MIN_CONVERGENT: usize = 50;
pub const CRITICAL_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    /// Standard exponential.
    #[default]
    ExponentialUnit,
    /// 0 or 2 with probability 1/2 each.
    TwoPointMammen,
    /// Every weight equal to one. Only useful for testing the plumbing.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    #[serde(default)]
    pub weight_family: WeightFamily,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            weight_family: WeightFamily::ExponentialUnit,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 99 {
            return Err(invalid(format!(
                "bootstrap needs at least 99 replications, got {}",
                self.replications
            )));
        }
        Ok(())
    }
}

/// Multiplier weights for one replication; the stream depends only on
/// `(config.seed, replication_index)`.
pub fn draw_weights(n: usize, config: &BootstrapConfig, replication_index: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(&[config.seed, replication_index]));
    match config.weight_family {
        WeightFamily::ExponentialUnit => (0..n).map(|_| Exp1.sample(&mut rng)).collect(),
        WeightFamily::TwoPointMammen => (0..n)
            .map(|_| if rng.random::<bool>() { 2.0 } else { 0.0 })
            .collect(),
        WeightFamily::Identity => vec![1.0; n],
    }
}

/// Which null is tested and in which model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSpec {
    pub hypothesis: Hypothesis,
    pub dynamic: bool,
    #[serde(default)]
    pub el: ElConfig,
    #[serde(default)]
    pub ivx: IvxConfig,
}

impl NullSpec {
    pub fn new(hypothesis: Hypothesis, dynamic: bool) -> Self {
        Self {
            hypothesis,
            dynamic: dynamic || hypothesis.needs_dynamic(),
            el: ElConfig::default(),
            ivx: IvxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// `(level, empirical quantile of the replicated statistics)`.
    pub critical_values: Vec<(f64, f64)>,
    pub convergent: usize,
    pub replications: usize,
}

/// `(1 + #{T_b >= T_0}) / (B + 1)` over the convergent replications.
pub fn rank_pvalue(observed: f64, replicated: &[f64]) -> f64 {
    let exceed = replicated.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (replicated.len() + 1) as f64
}

fn centre_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let means = z.row_mean();
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        row -= &means;
    }
    out
}

fn perturb(centred: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut out = centred.clone();
    for (t, mut row) in out.row_iter_mut().enumerate() {
        row *= weights[t] - 1.0;
    }
    out
}

/// Observed statistic and per-replication statistic function for `method`.
struct Prepared {
    observed: f64,
    dof: u32,
    centred: DMatrix<f64>,
    ivx: Option<crate::ivx::IvxScoreParts>,
}

fn prepare(sample: &TimeSeriesSample, tau: QuantileLevel, method: Method, null: &NullSpec) -> Result<Prepared> {
    let dynamic = null.dynamic || null.hypothesis.needs_dynamic();
    match method {
        Method::El => {
            let data = RegressionData::new(sample, dynamic);
            let cfg = ElTestConfig {
                dynamic,
                level: 0.05,
                el: null.el,
            };
            let res = el_test_on(&data, tau, null.hypothesis, &cfg)?;
            let (beta, gamma) = match (null.hypothesis, dynamic) {
                (Hypothesis::BetaOnly, false) => (0.0, None),
                (Hypothesis::BetaOnly, true) => (0.0, res.profiled),
                (Hypothesis::GammaOnly, _) => (res.profiled.unwrap_or(0.0), Some(0.0)),
                (Hypothesis::Joint, _) => (0.0, Some(0.0)),
            };
            if !res.statistic.is_finite() {
                return Err(QprError::Numerical(
                    "observed EL statistic is infinite (zero outside the score hull)".into(),
                ));
            }
            let rows = el_rows(&data, tau, beta, gamma, &null.el)?;
            Ok(Prepared {
                observed: res.statistic,
                dof: res.dof,
                centred: centre_columns(&rows.rows),
                ivx: None,
            })
        }
        Method::Ivx => {
            let cfg = IvxTestConfig {
                ivx: null.ivx,
                dynamic,
                level: 0.05,
            };
            let parts = ivx_score_parts(sample, tau, null.hypothesis, &cfg)?;
            Ok(Prepared {
                observed: parts.statistic()?,
                dof: parts.summands.ncols() as u32,
                centred: centre_columns(&parts.summands),
                ivx: Some(parts),
            })
        }
    }
}

impl Prepared {
    fn replicate(&self, weights: &[f64]) -> Option<f64> {
        let rows = perturb(&self.centred, weights);
        match &self.ivx {
            None => el_statistic(&rows).ok().filter(|s| s.converged).map(|s| s.statistic),
            Some(parts) => parts.wald(&rows).ok(),
        }
    }
}

/// Bootstrap p-value and critical values for the test of `null`.
pub fn bootstrap_pvalue(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    method: Method,
    null: &NullSpec,
    config: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    bootstrap_with_dof(sample, tau, method, null, config).map(|(o, _)| o)
}

fn bootstrap_with_dof(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    method: Method,
    null: &NullSpec,
    config: &BootstrapConfig,
) -> Result<(BootstrapOutcome, u32)> {
    config.validate()?;
    let prep = prepare(sample, tau, method, null)?;
    let n = prep.centred.nrows();
    let draws = map_indices(config.replications, config.execution, |b| {
        prep.replicate(&draw_weights(n, config, b as u64))
    });
    let mut stats: Vec<f64> = draws.into_iter().flatten().collect();
    if stats.len() < MIN_CONVERGENT {
        return Err(QprError::CalibrationFailed {
            convergent: stats.len(),
            required: MIN_CONVERGENT,
        });
    }
    let p_value = rank_pvalue(prep.observed, &stats);
    stats.sort_by(f64::total_cmp);
    let critical_values = CRITICAL_LEVELS
        .iter()
        .map(|&q| (q, sample_quantile_sorted(&stats, q)))
        .collect();
    Ok((
        BootstrapOutcome {
            statistic: prep.observed,
            p_value,
            critical_values,
            convergent: stats.len(),
            replications: config.replications,
        },
        prep.dof,
    ))
}

/// Bootstrap-calibrated [`TestResult`].
pub fn bootstrap_test(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    method: Method,
    null: &NullSpec,
    config: &BootstrapConfig,
    level: f64,
) -> Result<TestResult> {
    let (out, dof) = bootstrap_with_dof(sample, tau, method, null, config)?;
    Ok(TestResult {
        method,
        hypothesis: null.hypothesis,
        statistic: out.statistic,
        reference: DistributionRef::chi_square(dof)?,
        dof,
        p_value: out.p_value,
        level,
        reject: out.p_value < level,
        calibration: Calibration::Bootstrap,
        converged: true,
        profiled: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(family: WeightFamily) -> BootstrapConfig {
        BootstrapConfig {
            weight_family: family,
            ..BootstrapConfig::new(199, 42)
        }
    }

    #[test]
    fn exponential_weights_have_unit_mean() {
        let w = draw_weights(1_000_000, &cfg(WeightFamily::ExponentialUnit), 0);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 0.004, "mean {mean}");
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn two_point_support() {
        let w = draw_weights(10_000, &cfg(WeightFamily::TwoPointMammen), 3);
        assert!(w.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(w.contains(&0.0) && w.contains(&2.0));
    }

    #[test]
    fn weights_are_reproducible() {
        let c = cfg(WeightFamily::ExponentialUnit);
        assert_eq!(draw_weights(50, &c, 7), draw_weights(50, &c, 7));
        assert_ne!(draw_weights(50, &c, 7), draw_weights(50, &c, 8));
    }

    #[test]
    fn rank_pvalue_range_and_shift_invariance() {
        let reps: Vec<f64> = (0..99).map(|i| i as f64 * 0.1).collect();
        assert_eq!(rank_pvalue(100.0, &reps), 0.01);
        assert_eq!(rank_pvalue(-1.0, &reps), 1.0);
        let shifted: Vec<f64> = reps.iter().map(|v| v + 3.5).collect();
        assert_eq!(rank_pvalue(4.2, &reps), rank_pvalue(7.7, &shifted));
    }

    #[test]
    fn too_few_replications_is_config_error() {
        assert!(BootstrapConfig::new(98, 1).validate().is_err());
    }
}
