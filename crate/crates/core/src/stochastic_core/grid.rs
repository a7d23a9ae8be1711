use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            horizon: 1.0,
            n_steps: 50,
        }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { horizon, n_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "grid.horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("grid.n_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    /// `t_k`; the last point is the horizon exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points()).map(|k| self.time(k)).collect()
    }

    /// Grid index nearest to time `t`.
    pub fn step_of(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.n_steps)
    }

    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            n_steps: self.n_steps * factor,
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && self.horizon == other.horizon
    }
}
