//! Deviation scoring against a clean validation baseline.
//!
//! Forecast deviations are normalized per sensor with the median and
//! interquartile range of the validation deviations, so a handful of rough
//! validation points cannot inflate the baseline the way a mean/std pair
//! would. The per-step score is the worst normalized sensor, smoothed with
//! a trailing moving average; the detection threshold is the highest
//! smoothed score the validation data ever reaches, so by construction the
//! validation stream itself is never flagged.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("robust statistics need at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("deviation rows must all have {want} sensors, row {row} has {got}")]
    RaggedRow { row: usize, want: usize, got: usize },
    #[error("length mismatch: {lhs} forecasts vs {rhs} targets")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("empty input")]
    Empty,
}

pub const MIN_BASELINE_POINTS: usize = 4;
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_SMOOTHING: usize = 10;

/// Quantile of an ascending slice with linear interpolation between order
/// statistics (q = 0.5 of [1,2,3,4] is 2.5).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Per-sensor median and interquartile range of the baseline deviations.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RobustStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// `devs` is time-major: one row of per-sensor absolute deviations per step.
pub fn robust_stats(devs: &[Vec<f64>]) -> Result<RobustStats, DetectError> {
    if devs.len() < MIN_BASELINE_POINTS {
        return Err(DetectError::TooFewPoints {
            min: MIN_BASELINE_POINTS,
            got: devs.len(),
        });
    }
    let n = devs[0].len();
    if n == 0 {
        return Err(DetectError::Empty);
    }
    for (row, d) in devs.iter().enumerate() {
        if d.len() != n {
            return Err(DetectError::RaggedRow {
                row,
                want: n,
                got: d.len(),
            });
        }
    }
    let mut mu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut col = vec![0.0; devs.len()];
    for i in 0..n {
        for (t, d) in devs.iter().enumerate() {
            col[t] = d[i];
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        mu.push(quantile(&col, 0.5));
        let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
        sigma.push(iqr.max(SIGMA_FLOOR));
    }
    Ok(RobustStats { mu, sigma })
}

/// Absolute forecast errors, time-major.
pub fn deviations(
    forecasts: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, DetectError> {
    if forecasts.len() != targets.len() {
        return Err(DetectError::LengthMismatch {
            lhs: forecasts.len(),
            rhs: targets.len(),
        });
    }
    let mut out = Vec::with_capacity(forecasts.len());
    for (row, (f, y)) in forecasts.iter().zip(targets).enumerate() {
        if f.len() != y.len() {
            return Err(DetectError::RaggedRow {
                row,
                want: y.len(),
                got: f.len(),
            });
        }
        out.push(f.iter().zip(y).map(|(a, b)| (a - b).abs()).collect());
    }
    Ok(out)
}

/// Normalize each deviation row against the baseline statistics.
pub fn sensor_scores(devs: &[Vec<f64>], stats: &RobustStats) -> Vec<Vec<f64>> {
    devs.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, &d)| (d - stats.mu[i]) / stats.sigma[i])
                .collect()
        })
        .collect()
}

/// Trailing moving average (window `w_a`) of the per-step worst sensor
/// score. Steps with fewer than `w_a` predecessors average what exists.
pub fn aggregate(scores: &[Vec<f64>], w_a: usize) -> Vec<f64> {
    let maxes: Vec<f64> = scores
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let w_a = w_a.max(1);
    let mut out = Vec::with_capacity(maxes.len());
    let mut running = 0.0;
    for t in 0..maxes.len() {
        running += maxes[t];
        if t >= w_a {
            running -= maxes[t - w_a];
        }
        let span = (t + 1).min(w_a) as f64;
        out.push(running / span);
    }
    out
}

/// Highest smoothed score the baseline reaches.
pub fn threshold(agg_validation: &[f64]) -> Result<f64, DetectError> {
    agg_validation
        .iter()
        .cloned()
        .reduce(f64::max)
        .ok_or(DetectError::Empty)
}

/// Everything needed to score unseen data: baseline statistics, detection
/// threshold, and the smoothing window.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Calibration {
    pub stats: RobustStats,
    pub threshold: f64,
    pub w_a: usize,
}

impl Calibration {
    /// Fit from validation deviations: robust per-sensor baselines and a
    /// threshold at the validation maximum, so zero validation steps flag.
    pub fn fit(val_devs: &[Vec<f64>], w_a: usize) -> Result<Self, DetectError> {
        let stats = robust_stats(val_devs)?;
        let scores = sensor_scores(val_devs, &stats);
        let agg = aggregate(&scores, w_a);
        Ok(Calibration {
            stats,
            threshold: threshold(&agg)?,
            w_a,
        })
    }

    /// Score a deviation stream. `start_t` is the absolute time index of
    /// the first row (windowing consumes the first `w` steps of a series).
    pub fn trace(&self, devs: &[Vec<f64>], start_t: usize) -> AnomalyTrace {
        let sensor = sensor_scores(devs, &self.stats);
        let agg = aggregate(&sensor, self.w_a);
        let flags = agg.iter().map(|&a| a > self.threshold).collect();
        AnomalyTrace {
            start_t,
            sensor_scores: sensor,
            aggregate: agg,
            threshold: self.threshold,
            flags,
        }
    }
}

/// Scored stream: per-sensor normalized scores, smoothed aggregate, and
/// strict-threshold verdicts, aligned so row `i` is time `start_t + i`.
#[derive(Debug, Clone)]
pub struct AnomalyTrace {
    pub start_t: usize,
    pub sensor_scores: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub threshold: f64,
    pub flags: Vec<bool>,
}

impl AnomalyTrace {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Sensor with the highest score at row `i`, ties to the lower index.
    pub fn top_sensor(&self, i: usize) -> usize {
        argmax(&self.sensor_scores[i])
    }
}

/// Index of the maximum, ties broken toward the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Segment-level credit assignment: if any step inside a maximal run of
/// true anomaly labels is flagged, the whole run counts as flagged. Flags
/// are never removed.
pub fn point_adjust(pred: &[bool], truth: &[bool]) -> Vec<bool> {
    assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
    let mut out = pred.to_vec();
    let mut t = 0;
    while t < truth.len() {
        if truth[t] {
            let start = t;
            while t < truth.len() && truth[t] {
                t += 1;
            }
            if pred[start..t].iter().any(|&p| p) {
                for o in &mut out[start..t] {
                    *o = true;
                }
            }
        } else {
            t += 1;
        }
    }
    out
}

/// Precision/recall/F1 with explicit zero-denominator handling.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when a denominator was zero and the corresponding value was
    /// reported as 0 by convention.
    pub degenerate: bool,
}

pub fn prf1(pred: &[bool], truth: &[bool]) -> Metrics {
    assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in pred.iter().zip(truth) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut degenerate = false;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        degenerate,
    }
}
