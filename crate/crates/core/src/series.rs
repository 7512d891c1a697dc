//! Uniform time grids and the series sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n_steps` points `0, dt, 2 dt, ...` (the name counts samples, not intervals).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("time step must be positive, got {dt}")));
        }
        if n_steps < 2 {
            return Err(Error::domain(format!("a grid needs at least 2 points, got {n_steps}")));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid `0..=t_max` with step `dt`; `t_max` is rounded to the nearest step.
    pub fn spanning(dt: f64, t_max: f64) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::domain(format!("t_max must be positive, got {t_max}")));
        }
        let steps = (t_max / dt).round() as usize;
        Self::new(dt, steps + 1)
    }

    pub fn len(&self) -> usize {
        self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.n_steps == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.n_steps - 1)
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_steps).map(|i| self.time(i))
    }

    /// Index range of grid points inside `[t_lo, t_hi]` (inclusive, with a
    /// tolerance of a millionth of a step).
    pub fn window(&self, t_lo: f64, t_hi: f64) -> std::ops::Range<usize> {
        let eps = 1e-6 * self.dt;
        let lo = ((t_lo - eps) / self.dt).ceil().max(0.0) as usize;
        let hi = (((t_hi + eps) / self.dt).floor() as usize + 1).min(self.n_steps);
        lo.min(hi)..hi
    }

    /// The same step, truncated to the first `n` points.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.dt, n.min(self.n_steps))
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// Real values on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "series has {} values but the grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.times().map(f).collect();
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.grid.times()
    }

    pub fn truncated(&self, n: usize) -> Result<Self> {
        let grid = self.grid.truncated(n)?;
        Ok(Self { values: self.values[..grid.len()].to_vec(), grid })
    }

    /// Largest absolute pointwise difference; the grids must match.
    pub fn max_abs_diff(&self, other: &TimeSeries) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Root-mean-square difference over the grid points inside `[t_lo, t_hi]`.
    pub fn rms_diff(&self, other: &TimeSeries, t_lo: f64, t_hi: f64) -> Result<f64> {
        self.check_same_grid(other)?;
        let range = self.grid.window(t_lo, t_hi);
        if range.is_empty() {
            return Err(Error::domain(format!("window [{t_lo}, {t_hi}] holds no grid points")));
        }
        let n = range.len() as f64;
        let sum: f64 = range.map(|i| (self.values[i] - other.values[i]).powi(2)).sum();
        Ok((sum / n).sqrt())
    }

    pub fn check_same_grid(&self, other: &TimeSeries) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "grids differ: (dt {}, {} points) vs (dt {}, {} points)",
                self.grid.dt,
                self.grid.len(),
                other.grid.dt,
                other.grid.len()
            )))
        }
    }
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}
