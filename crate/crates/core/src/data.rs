//! Monthly predictor datasets and the empirical predictability report.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_test, BootstrapConfig, NullSpec};
use crate::el::{el_test, ElTestConfig};
use crate::error::{invalid, QprError, Result};
use crate::inference::{Calibration, Hypothesis, Method, TestResult};
use crate::ivx::{ivx_qr_test, IvxTestConfig};
use crate::mc::format_table;
use crate::qr::fit_self_weighted;
use crate::sample::{RegressionData, TimeSeriesSample};
use crate::seed::{coord_bits, derive_seed, fnv1a};
use crate::stats::QuantileLevel;

pub const MIN_USABLE_ROWS: usize = 60;
const MISSING_TOKENS: [&str; 6] = ["", "na", "nan", "n/a", ".", "null"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(invalid(format!("month {month} is outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    /// Accepts `YYYYMM` and `YYYY-MM`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, m) = if s.len() == 6 && s.bytes().all(|b| b.is_ascii_digit()) {
            (&s[..4], &s[4..])
        } else if s.len() == 7 && s.as_bytes()[4] == b'-' {
            (&s[..4], &s[5..])
        } else {
            return Err(QprError::Data(format!("cannot parse date `{s}` (expected YYYYMM or YYYY-MM)")));
        };
        let year = y
            .parse()
            .map_err(|_| QprError::Data(format!("cannot parse year in `{s}`")))?;
        let month = m
            .parse()
            .map_err(|_| QprError::Data(format!("cannot parse month in `{s}`")))?;
        Self::new(year, month).map_err(|e| QprError::Data(e.to_string()))
    }

    fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    /// Whole months from `self` to `other`.
    pub fn months_until(self, other: Self) -> i64 {
        other.index() - self.index()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}{:02}", self.year, self.month)
    }
}

/// Which columns of the input file play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub date: String,
    pub response: String,
    pub predictors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorDataset {
    pub dates: Vec<YearMonth>,
    pub excess_return: Vec<f64>,
    pub predictors: Vec<(String, Vec<f64>)>,
    /// Dates of rows dropped because a requested column was missing.
    pub dropped: Vec<YearMonth>,
    /// Consecutive retained rows that are more than one month apart.
    pub gaps: Vec<(YearMonth, YearMonth)>,
}

fn parse_value(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if MISSING_TOKENS.contains(&t.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| QprError::Data(format!("row {row}, column `{column}`: cannot parse `{t}`")))?;
    Ok(v.is_finite().then_some(v))
}

pub fn parse_dataset(path: &Path, map: &ColumnMap) -> Result<PredictorDataset> {
    let file = std::fs::File::open(path)?;
    parse_dataset_from_reader(file, map)
}

pub fn parse_dataset_from_reader<R: Read>(reader: R, map: &ColumnMap) -> Result<PredictorDataset> {
    if map.predictors.is_empty() {
        return Err(invalid("no predictor columns requested"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| QprError::MissingColumn(name.to_string()))
    };
    let idate = col(&map.date)?;
    let iret = col(&map.response)?;
    let ipred = map
        .predictors
        .iter()
        .map(|p| col(p))
        .collect::<Result<Vec<_>>>()?;

    let mut ds = PredictorDataset {
        dates: Vec::new(),
        excess_return: Vec::new(),
        predictors: map.predictors.iter().map(|p| (p.clone(), Vec::new())).collect(),
        dropped: Vec::new(),
        gaps: Vec::new(),
    };
    let mut last: Option<YearMonth> = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let date = YearMonth::parse(&rec[idate])?;
        if let Some(prev) = last {
            if date <= prev {
                return Err(QprError::NonMonotoneDates {
                    row,
                    date: date.to_string(),
                });
            }
        }
        last = Some(date);
        let ret = parse_value(&rec[iret], row, &map.response)?;
        let preds = ipred
            .iter()
            .zip(&map.predictors)
            .map(|(&j, name)| parse_value(&rec[j], row, name))
            .collect::<Result<Vec<_>>>()?;
        match (ret, preds.iter().copied().collect::<Option<Vec<f64>>>()) {
            (Some(r), Some(p)) => {
                if let Some(&prev) = ds.dates.last() {
                    if prev.months_until(date) != 1 {
                        ds.gaps.push((prev, date));
                    }
                }
                ds.dates.push(date);
                ds.excess_return.push(r);
                for (slot, v) in ds.predictors.iter_mut().zip(p) {
                    slot.1.push(v);
                }
            }
            _ => ds.dropped.push(date),
        }
    }
    ds.check_usable()?;
    Ok(ds)
}

impl PredictorDataset {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn check_usable(&self) -> Result<()> {
        if self.len() < MIN_USABLE_ROWS {
            return Err(QprError::Data(format!(
                "only {} usable rows, at least {MIN_USABLE_ROWS} needed",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn predictor(&self, name: &str) -> Result<&[f64]> {
        self.predictors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| QprError::MissingColumn(name.to_string()))
    }

    /// Rows with `from <= date <= to`; either bound may be open.
    pub fn subset(&self, from: Option<YearMonth>, to: Option<YearMonth>) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| from.map_or(true, |f| self.dates[i] >= f) && to.map_or(true, |t| self.dates[i] <= t))
            .collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let first = keep.first().map(|&i| self.dates[i]);
        let last = keep.last().map(|&i| self.dates[i]);
        let inside = |d: YearMonth| first.is_some_and(|f| d >= f) && last.is_some_and(|l| d <= l);
        let out = Self {
            dates: keep.iter().map(|&i| self.dates[i]).collect(),
            excess_return: pick(&self.excess_return),
            predictors: self
                .predictors
                .iter()
                .map(|(n, v)| (n.clone(), pick(v)))
                .collect(),
            dropped: self.dropped.iter().copied().filter(|&d| inside(d)).collect(),
            gaps: self
                .gaps
                .iter()
                .copied()
                .filter(|&(a, b)| inside(a) && inside(b))
                .collect(),
        };
        out.check_usable()?;
        Ok(out)
    }

    /// Sample pairing `y_t` (return at month `t`) with `x_{t-1}` (predictor
    /// one month earlier): `x_0..x_n` are the predictor values over all rows,
    /// `y_1..y_n` the returns from the second row on.
    pub fn sample_for(&self, predictor: &str) -> Result<TimeSeriesSample> {
        let x = self.predictor(predictor)?.to_vec();
        let y = self.excess_return[1..].to_vec();
        TimeSeriesSample::new(y, x).map_err(|e| QprError::Data(e.to_string()))
    }

    /// Writes the dataset back out (date as `YYYYMM`).
    pub fn write_csv<W: std::io::Write>(&self, writer: W, map: &ColumnMap) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![map.date.clone(), map.response.clone()];
        header.extend(self.predictors.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.dates[i].to_string(), self.excess_return[i].to_string()];
            rec.extend(self.predictors.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOptions {
    pub hypothesis: Hypothesis,
    pub dynamic: bool,
    pub level: f64,
    pub bootstrap_replications: usize,
    pub seed: u64,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        Self {
            hypothesis: Hypothesis::BetaOnly,
            dynamic: true,
            level: 0.05,
            bootstrap_replications: 399,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub predictor: String,
    pub tau: f64,
    pub method: Method,
    pub calibration: Calibration,
    pub test: Option<TestResult>,
    /// Self-weighted quantile-regression coefficients `(alpha, beta[, gamma])`.
    pub coefficients: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub hypothesis: Hypothesis,
    pub dynamic: bool,
    pub first_date: YearMonth,
    pub last_date: YearMonth,
    pub observations: usize,
    pub dropped_rows: usize,
    pub gaps: Vec<(YearMonth, YearMonth)>,
    pub rows: Vec<EmpiricalRow>,
}

fn run_combination(
    sample: &TimeSeriesSample,
    tau: QuantileLevel,
    method: Method,
    calibration: Calibration,
    options: &EmpiricalOptions,
    seed: u64,
) -> Result<TestResult> {
    let dynamic = options.dynamic || options.hypothesis.needs_dynamic();
    match (method, calibration) {
        (Method::El, Calibration::Asymptotic) => el_test(
            sample,
            tau,
            options.hypothesis,
            &ElTestConfig {
                dynamic,
                level: options.level,
                ..Default::default()
            },
        ),
        (Method::Ivx, Calibration::Asymptotic) => ivx_qr_test(
            sample,
            tau,
            options.hypothesis,
            &IvxTestConfig {
                dynamic,
                level: options.level,
                ..Default::default()
            },
        ),
        (_, Calibration::Bootstrap) => bootstrap_test(
            sample,
            tau,
            method,
            &NullSpec::new(options.hypothesis, dynamic),
            &BootstrapConfig::new(options.bootstrap_replications, seed),
            options.level,
        ),
    }
}

/// Runs every `(predictor, tau, method, calibration)` combination. A failing
/// combination is recorded with its error and the run continues.
pub fn run_empirical(
    dataset: &PredictorDataset,
    predictors: &[String],
    taus: &[f64],
    methods: &[Method],
    calibrations: &[Calibration],
    options: &EmpiricalOptions,
) -> Result<EmpiricalReport> {
    if predictors.is_empty() || taus.is_empty() || methods.is_empty() || calibrations.is_empty() {
        return Err(invalid("empirical run needs at least one predictor, tau, method and calibration"));
    }
    let taus = taus
        .iter()
        .map(|&t| QuantileLevel::new(t))
        .collect::<Result<Vec<_>>>()?;
    let dynamic = options.dynamic || options.hypothesis.needs_dynamic();
    let mut rows = Vec::new();
    for name in predictors {
        let sample = dataset.sample_for(name);
        for &tau in &taus {
            let coefficients = sample.as_ref().ok().and_then(|s| {
                fit_self_weighted(&RegressionData::new(s, dynamic), tau)
                    .ok()
                    .map(|f| f.coefficients)
            });
            for &method in methods {
                for &calibration in calibrations {
                    let seed = derive_seed(&[
                        options.seed,
                        fnv1a(name.as_bytes()),
                        coord_bits(tau.value()),
                        method as u64,
                    ]);
                    let outcome = match &sample {
                        Ok(s) => run_combination(s, tau, method, calibration, options, seed),
                        Err(e) => Err(QprError::Data(e.to_string())),
                    };
                    let (test, error) = match outcome {
                        Ok(t) => (Some(t), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    rows.push(EmpiricalRow {
                        predictor: name.clone(),
                        tau: tau.value(),
                        method,
                        calibration,
                        test,
                        coefficients: coefficients.clone(),
                        error,
                    });
                }
            }
        }
    }
    Ok(EmpiricalReport {
        hypothesis: options.hypothesis,
        dynamic,
        first_date: dataset.dates[0],
        last_date: *dataset.dates.last().expect("usable dataset"),
        observations: dataset.len() - 1,
        dropped_rows: dataset.dropped.len(),
        gaps: dataset.gaps.clone(),
        rows,
    })
}

const REPORT_HEADER: [&str; 14] = [
    "predictor",
    "tau",
    "method",
    "calibration",
    "hypothesis",
    "statistic",
    "dof",
    "p_value",
    "reject",
    "alpha_hat",
    "beta_hat",
    "gamma_hat",
    "sample",
    "error",
];

impl EmpiricalReport {
    fn records(&self) -> Vec<Vec<String>> {
        let range = format!("{}-{}", self.first_date, self.last_date);
        self.rows
            .iter()
            .map(|r| {
                let coef = |i: usize| {
                    r.coefficients
                        .as_ref()
                        .and_then(|c| c.get(i))
                        .map_or(String::new(), |v| format!("{v:.6}"))
                };
                let (stat, dof, p, rej) = match &r.test {
                    Some(t) => (
                        format!("{:.6}", t.statistic),
                        t.dof.to_string(),
                        format!("{:.6}", t.p_value),
                        t.reject.to_string(),
                    ),
                    None => Default::default(),
                };
                vec![
                    r.predictor.clone(),
                    r.tau.to_string(),
                    r.method.as_str().into(),
                    r.calibration.as_str().into(),
                    self.hypothesis.as_str().into(),
                    stat,
                    dof,
                    p,
                    rej,
                    coef(0),
                    coef(1),
                    coef(2),
                    range.clone(),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect()
    }

    /// Long-format CSV, one row per combination.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER)?;
        for rec in self.records() {
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| QprError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    pub fn to_table(&self) -> String {
        let header: Vec<String> = REPORT_HEADER.iter().map(|s| s.to_string()).collect();
        format_table(&header, &self.records())
    }
}
