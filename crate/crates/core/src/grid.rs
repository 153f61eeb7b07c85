use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = t0 + k h`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    n_steps: usize,
    h: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "grid bounds must be finite (t0 = {t0}, T = {horizon})"
            )));
        }
        if t0 < 0.0 {
            return Err(Error::Config(format!("grid start t0 = {t0} must be >= 0")));
        }
        if horizon <= t0 {
            return Err(Error::Config(format!(
                "grid span must be positive (t0 = {t0}, T = {horizon})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Ok(Self {
            t0,
            horizon,
            n_steps,
            h: (horizon - t0) / n_steps as f64,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node `t_k`; the last node is pinned to the horizon.
    pub fn t(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.t0 + k as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.t(k)).collect()
    }

    /// Same span with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be positive".into()));
        }
        Self::new(self.t0, self.horizon, self.n_steps * factor)
    }

    /// True when both grids have the same span and step count.
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && self.t0 == other.t0 && self.horizon == other.horizon
    }
}

/// Builds a grid on `[t0, horizon]` with `n_steps` uniform steps.
pub fn make_grid(t0: f64, horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, horizon, n_steps)
}
