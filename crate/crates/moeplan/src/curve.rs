//! Piecewise-linear latency curves.
//!
//! Profiled latencies are tables of `(n, seconds)` samples. Evaluation
//! interpolates linearly between samples and clamps beyond the last sample;
//! `eval(0)` is always 0 (no work, no time).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-negative, non-decreasing piecewise-linear function of a token count
/// (or byte count, for cold-start curves).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Sample abscissae, strictly increasing, all > 0.
    pub points: Vec<f64>,
    /// Sampled values, non-negative and non-decreasing.
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Curve { points, values };
        c.validate("curve")?;
        Ok(c)
    }

    /// A curve `n -> slope * n + intercept_at_one` sampled at two points, i.e.
    /// effectively linear over `[1, n_max]`.
    pub fn linear(slope: f64, n_max: f64) -> Self {
        Curve { points: vec![1.0, n_max], values: vec![slope, slope * n_max] }
    }

    /// An affine curve `x -> base + slope * x` sampled over `[0+, x_max]`.
    pub fn affine(base: f64, slope: f64, x_max: f64) -> Self {
        Curve { points: vec![1e-9, x_max], values: vec![base, base + slope * x_max] }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.values.len() {
            return Err(Error::config(field, "curve needs equally many points and values, >= 1"));
        }
        for w in self.points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config(field, "curve points must be strictly increasing"));
            }
        }
        for w in self.values.windows(2) {
            if w[1] < w[0] {
                return Err(Error::config(field, "curve values must be non-decreasing"));
            }
        }
        if self.values[0] < 0.0 {
            return Err(Error::config(field, "curve values must be non-negative"));
        }
        Ok(())
    }

    /// Interpolated value at `x`. Zero for `x <= 0`, clamped outside the
    /// sampled range.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let pts = &self.points;
        let vals = &self.values;
        if x <= pts[0] {
            return vals[0];
        }
        if x >= *pts.last().unwrap() {
            return *vals.last().unwrap();
        }
        // upper_bound on pts
        let mut hi = pts.partition_point(|&p| p < x);
        if hi == 0 {
            hi = 1;
        }
        let lo = hi - 1;
        let t = (x - pts[lo]) / (pts[hi] - pts[lo]);
        vals[lo] + t * (vals[hi] - vals[lo])
    }
}
