//! Types shared by every hypothesis test.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::DistributionRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    El,
    Ivx,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::El => "el",
            Method::Ivx => "ivx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Asymptotic,
    Bootstrap,
}

impl Calibration {
    pub fn as_str(self) -> &'static str {
        match self {
            Calibration::Asymptotic => "asymptotic",
            Calibration::Bootstrap => "bootstrap",
        }
    }
}

/// Null hypothesis on the predictive slope `beta` and the lag coefficient `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// `beta = 0`; `gamma` is profiled when the model is dynamic.
    BetaOnly,
    /// `gamma = 0` with `beta` profiled.
    GammaOnly,
    /// `beta = 0` and `gamma = 0`.
    Joint,
}

impl Hypothesis {
    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::BetaOnly => "beta_only",
            Hypothesis::GammaOnly => "gamma_only",
            Hypothesis::Joint => "joint",
        }
    }

    pub fn needs_dynamic(self) -> bool {
        !matches!(self, Hypothesis::BetaOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub hypothesis: Hypothesis,
    pub statistic: f64,
    pub reference: DistributionRef,
    pub dof: u32,
    pub p_value: f64,
    pub level: f64,
    pub reject: bool,
    pub calibration: Calibration,
    /// False when an inner solve failed (EL hull violation, profile search
    /// without a finite value).
    pub converged: bool,
    /// Value of the profiled nuisance coefficient, when there is one.
    pub profiled: Option<f64>,
}

impl TestResult {
    pub(crate) fn asymptotic(
        method: Method,
        hypothesis: Hypothesis,
        statistic: f64,
        dof: u32,
        converged: bool,
        level: f64,
    ) -> Result<Self> {
        let reference = DistributionRef::chi_square(dof)?;
        let p_value = reference.survival(statistic)?;
        Ok(Self {
            method,
            hypothesis,
            statistic,
            reference,
            dof,
            p_value,
            level,
            reject: p_value < level,
            calibration: Calibration::Asymptotic,
            converged,
            profiled: None,
        })
    }

    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}
