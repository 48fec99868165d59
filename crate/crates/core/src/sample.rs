use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, QprError, Result};

/// Where a sample came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub label: Option<String>,
}

/// Observations `y_1..y_n` together with the predictor path `x_0..x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    y: Vec<f64>,
    x: Vec<f64>,
    pub meta: SampleMeta,
}

impl TimeSeriesSample {
    pub fn new(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(invalid("sample has no observations"));
        }
        if x.len() != y.len() + 1 {
            return Err(invalid(format!(
                "x must hold n + 1 = {} values (x_0..x_n), got {}",
                y.len() + 1,
                x.len()
            )));
        }
        if let Some(t) = y.iter().chain(&x).position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at position {t}")));
        }
        Ok(Self {
            y,
            x,
            meta: SampleMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: SampleMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `y_1..y_n`
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `x_0..x_n`
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Returns a copy with `y` multiplied by `factor`.
    pub fn scale_y(&self, factor: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v * factor).collect(),
            x: self.x.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Returns a copy with `x` multiplied by `factor`.
    pub fn scale_x(&self, factor: f64) -> Self {
        Self {
            y: self.y.clone(),
            x: self.x.iter().map(|v| v * factor).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Writes columns `t,y,x`; row `t = 0` carries `x_0` and an empty `y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "y", "x"])?;
        w.write_record(["0", "", &self.x[0].to_string()])?;
        for (t, (y, x)) in self.y.iter().zip(&self.x[1..]).enumerate() {
            w.write_record([(t + 1).to_string(), y.to_string(), x.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| QprError::MissingColumn(name.to_string()))
        };
        let (iy, ix) = (col("y")?, col("x")?);
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| QprError::Data(format!("row {}: cannot parse `{s}`", row + 1)))
            };
            x.push(parse(&rec[ix])?);
            if row > 0 {
                y.push(parse(&rec[iy])?);
            }
        }
        Self::new(y, x).map_err(|e| QprError::Data(e.to_string()))
    }
}

/// Aligned regression arrays: response `y_t` with regressors `x_{t-1}` and,
/// when the dynamic term is on, `y_{t-1}`. The dynamic view drops `t = 1`
/// because `y_0` is not observed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub y: Vec<f64>,
    pub x_lag: Vec<f64>,
    pub y_lag: Option<Vec<f64>>,
}

impl RegressionData {
    pub fn new(sample: &TimeSeriesSample, dynamic: bool) -> Self {
        let n = sample.n();
        if dynamic {
            Self {
                y: sample.y[1..].to_vec(),
                x_lag: sample.x[1..n].to_vec(),
                y_lag: Some(sample.y[..n - 1].to_vec()),
            }
        } else {
            Self {
                y: sample.y.clone(),
                x_lag: sample.x[..n].to_vec(),
                y_lag: None,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn is_dynamic(&self) -> bool {
        self.y_lag.is_some()
    }
}
