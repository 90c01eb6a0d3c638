//! Multivariate sensor series: CSV ingestion, min-max scaling against the
//! training range, and sliding-window extraction.
//!
//! The on-disk contract is one CSV with a header row of sensor names, one row
//! per time step, and an optional `label` column holding 0/1 ground truth.

use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("row {row} has {got} fields, expected {want}")]
    RaggedRow { row: usize, got: usize, want: usize },
    #[error("row {row}, column {column}: {value:?} is not a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("series has no sensor columns")]
    NoSensors,
    #[error("series has no rows")]
    NoRows,
    #[error("window length {w} needs at least {min} time steps, series has {len}")]
    TooShort { w: usize, min: usize, len: usize },
    #[error("scaler built for {want} sensors, series has {got}")]
    SensorCount { want: usize, got: usize },
    #[error("label column must be 0 or 1, row {row} has {value:?}")]
    BadLabel { row: usize, value: String },
}

pub const LABEL_COLUMN: &str = "label";

/// A multivariate series: `values[i][t]` is sensor `i` at time step `t`.
#[derive(Debug, Clone)]
pub struct SensorSeries {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
}

impl SensorSeries {
    pub fn new(
        names: Vec<String>,
        values: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, SeriesError> {
        if names.is_empty() || values.is_empty() {
            return Err(SeriesError::NoSensors);
        }
        let len = values[0].len();
        if len == 0 {
            return Err(SeriesError::NoRows);
        }
        for (i, v) in values.iter().enumerate() {
            if v.len() != len {
                return Err(SeriesError::RaggedRow {
                    row: i,
                    got: v.len(),
                    want: len,
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(SeriesError::RaggedRow {
                    row: 0,
                    got: l.len(),
                    want: len,
                });
            }
        }
        Ok(SensorSeries {
            names,
            values,
            labels,
        })
    }

    pub fn sensors(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Chronological slice `[from, to)` keeping labels aligned.
    pub fn slice(&self, from: usize, to: usize) -> SensorSeries {
        SensorSeries {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v[from..to].to_vec()).collect(),
            labels: self.labels.as_ref().map(|l| l[from..to].to_vec()),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let mut label_col = None;
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if h.trim().eq_ignore_ascii_case(LABEL_COLUMN) {
                label_col = Some(i);
            } else {
                names.push(h.trim().to_string());
                cols.push(i);
            }
        }
        if names.is_empty() {
            return Err(SeriesError::NoSensors);
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut labels: Vec<u8> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(SeriesError::RaggedRow {
                    row,
                    got: rec.len(),
                    want: headers.len(),
                });
            }
            for (slot, &i) in cols.iter().enumerate() {
                let raw = rec[i].trim();
                let v: f64 = raw.parse().map_err(|_| SeriesError::BadNumber {
                    row,
                    column: names[slot].clone(),
                    value: raw.to_string(),
                })?;
                values[slot].push(v);
            }
            if let Some(i) = label_col {
                let raw = rec[i].trim();
                match raw {
                    "0" => labels.push(0),
                    "1" => labels.push(1),
                    _ => {
                        return Err(SeriesError::BadLabel {
                            row,
                            value: raw.to_string(),
                        })
                    }
                }
            }
        }
        if values[0].is_empty() {
            return Err(SeriesError::NoRows);
        }
        SensorSeries::new(names, values, label_col.map(|_| labels))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SeriesError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN);
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row: Vec<String> = self.values.iter().map(|v| format!("{}", v[t])).collect();
            if let Some(l) = &self.labels {
                row.push(format!("{}", l[t]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sensor min-max scaling fit on the training range.
///
/// Scaled training values land in `[0, 1]`; later data is clipped to
/// `[-0.5, 1.5]` so moderately out-of-range readings survive while extremes
/// cannot blow up the encoder. A constant sensor maps to 0.0 (with a warning)
/// and keeps its constants for the inverse transform.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

pub const SCALE_CLIP_LO: f64 = -0.5;
pub const SCALE_CLIP_HI: f64 = 1.5;

impl MinMaxScaler {
    pub fn fit(series: &SensorSeries) -> Self {
        let mut mins = Vec::with_capacity(series.sensors());
        let mut maxs = Vec::with_capacity(series.sensors());
        for (i, v) in series.values.iter().enumerate() {
            let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx <= mn {
                log::warn!(
                    "sensor {} is constant at {mn}; scaling it to 0.0",
                    series.names[i]
                );
            }
            mins.push(mn);
            maxs.push(mx);
        }
        MinMaxScaler { mins, maxs }
    }

    pub fn sensors(&self) -> usize {
        self.mins.len()
    }

    fn check(&self, series: &SensorSeries) -> Result<(), SeriesError> {
        if series.sensors() != self.sensors() {
            return Err(SeriesError::SensorCount {
                want: self.sensors(),
                got: series.sensors(),
            });
        }
        Ok(())
    }

    /// Scale training data: endpoints map to exactly 0 and 1.
    pub fn transform_train(&self, series: &SensorSeries) -> Result<SensorSeries, SeriesError> {
        self.transform_inner(series, false)
    }

    /// Scale unseen data, clipping to `[-0.5, 1.5]`.
    pub fn transform(&self, series: &SensorSeries) -> Result<SensorSeries, SeriesError> {
        self.transform_inner(series, true)
    }

    fn transform_inner(&self, series: &SensorSeries, clip: bool) -> Result<SensorSeries, SeriesError> {
        self.check(series)?;
        let mut values = Vec::with_capacity(series.sensors());
        for (i, v) in series.values.iter().enumerate() {
            let range = self.maxs[i] - self.mins[i];
            let col: Vec<f64> = v
                .iter()
                .map(|&x| {
                    let s = if range > 0.0 {
                        (x - self.mins[i]) / range
                    } else {
                        0.0
                    };
                    if clip {
                        s.clamp(SCALE_CLIP_LO, SCALE_CLIP_HI)
                    } else {
                        s
                    }
                })
                .collect();
            values.push(col);
        }
        Ok(SensorSeries {
            names: series.names.clone(),
            values,
            labels: series.labels.clone(),
        })
    }

    /// Map one scaled value of sensor `i` back to engineering units.
    pub fn inverse_value(&self, i: usize, scaled: f64) -> f64 {
        let range = self.maxs[i] - self.mins[i];
        if range > 0.0 {
            self.mins[i] + scaled * range
        } else {
            self.mins[i]
        }
    }

    /// Map an engineering-unit value of sensor `i` into scaled space.
    pub fn scale_value(&self, i: usize, raw: f64) -> f64 {
        let range = self.maxs[i] - self.mins[i];
        if range > 0.0 {
            (raw - self.mins[i]) / range
        } else {
            0.0
        }
    }
}

/// One training/forecast example: the window of the `w` readings before
/// `t` for every sensor (row-major n x w) and the readings at `t`.
#[derive(Debug, Clone)]
pub struct SensorWindow {
    pub t: usize,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
}

/// Extract every window of length `w`. Window `t` (for `t` in `w..len`)
/// holds columns `t-w..t` as history and column `t` as target, so a series
/// of length `T` yields `T - w` windows.
pub fn sliding_windows(series: &SensorSeries, w: usize) -> Result<Vec<SensorWindow>, SeriesError> {
    let len = series.len();
    if w == 0 || len < w + 1 {
        return Err(SeriesError::TooShort {
            w,
            min: w + 1,
            len,
        });
    }
    let n = series.sensors();
    let mut out = Vec::with_capacity(len - w);
    for t in w..len {
        let mut history = vec![0.0; n * w];
        let mut target = vec![0.0; n];
        for i in 0..n {
            let col = &series.values[i];
            history[i * w..(i + 1) * w].copy_from_slice(&col[t - w..t]);
            target[i] = col[t];
        }
        out.push(SensorWindow { t, history, target });
    }
    Ok(out)
}
