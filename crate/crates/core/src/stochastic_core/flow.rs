use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::cost_model::{CostForm, CostSpec};
use crate::error::{Error, Result};
use crate::util::fmt_g12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowRole {
    /// Mean-field law p*.
    MeanField,
    /// n-player empirical law pⁿ.
    NPlayer,
    /// Empirical law νⁿ of i.i.d. copies.
    IidCopies,
}

/// Empirical flow of real-valued paths on a grid, stored `(sample, step)` row-major
/// with `n_steps + 1` values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    pub grid: TimeGrid,
    pub role: FlowRole,
    n_samples: usize,
    values: Vec<f64>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, role: FlowRole, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        let width = grid.n_points();
        if values.is_empty() || values.len() % width != 0 {
            return Err(Error::LengthMismatch {
                what: "flow values vs grid points",
                left: values.len(),
                right: width,
            });
        }
        Ok(MeasureFlow {
            grid,
            role,
            n_samples: values.len() / width,
            values,
        })
    }

    pub fn from_paths(grid: TimeGrid, role: FlowRole, paths: &[Vec<f64>]) -> Result<Self> {
        let width = grid.n_points();
        let mut values = Vec::with_capacity(paths.len() * width);
        for p in paths {
            if p.len() != width {
                return Err(Error::LengthMismatch {
                    what: "path length vs grid points",
                    left: p.len(),
                    right: width,
                });
            }
            values.extend_from_slice(p);
        }
        Self::new(grid, role, values)
    }

    /// Every sample equal to `path`.
    pub fn constant_path(
        grid: TimeGrid,
        role: FlowRole,
        path: &[f64],
        n_samples: usize,
    ) -> Result<Self> {
        let paths = vec![path.to_vec(); n_samples.max(1)];
        Self::from_paths(grid, role, &paths)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }

    pub fn path(&self, sample: usize) -> &[f64] {
        let w = self.n_points();
        &self.values[sample * w..(sample + 1) * w]
    }

    #[inline]
    pub fn value(&self, sample: usize, step: usize) -> f64 {
        self.values[sample * self.n_points() + step]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn marginal(&self, step: usize) -> Vec<f64> {
        (0..self.n_samples).map(|s| self.value(s, step)).collect()
    }

    pub fn with_role(mut self, role: FlowRole) -> Self {
        self.role = role;
        self
    }

    /// Flow made of the listed samples, in the given order.
    pub fn select(&self, samples: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(samples.len() * self.n_points());
        for &s in samples {
            values.extend_from_slice(self.path(s));
        }
        MeasureFlow::new(self.grid, self.role, values)
    }

    pub fn check_same_grid(&self, other: &MeasureFlow) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}, {}) vs ({}, {})",
                self.grid.horizon, self.grid.n_steps, other.grid.horizon, other.grid.n_steps
            )))
        }
    }

    /// Per-step marginals prepared for fast `c*` / `a*` averages.
    pub fn marginals(&self, cost: &CostSpec) -> Vec<EmpiricalMarginal> {
        (0..self.n_points())
            .map(|k| EmpiricalMarginal::new(&self.marginal(k), cost))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,step,value\n");
        for s in 0..self.n_samples {
            for k in 0..self.n_points() {
                let _ = writeln!(out, "{s},{k},{}", fmt_g12(self.value(s, k)));
            }
        }
        out
    }

    pub fn from_csv(text: &str, grid: TimeGrid, role: FlowRole) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "sample,step,value" => {}
            other => {
                return Err(Error::Config(format!(
                    "unexpected flow CSV header {other:?}"
                )))
            }
        }
        let width = grid.n_points();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse_idx = |p: Option<&str>| -> Result<usize> {
                p.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad flow CSV row {}", row + 2)))
            };
            let s = parse_idx(parts.next())?;
            let k = parse_idx(parts.next())?;
            let v: f64 = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("bad flow CSV value at row {}", row + 2)))?;
            if s * width + k != values.len() || k >= width {
                return Err(Error::Config(format!(
                    "flow CSV rows out of order at row {}",
                    row + 2
                )));
            }
            values.push(v);
        }
        MeasureFlow::new(grid, role, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, grid: TimeGrid, role: FlowRole) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, grid, role)
    }
}

/// Sidecar metadata written next to an exported flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetadata {
    pub grid: TimeGrid,
    pub role: FlowRole,
    pub n_samples: usize,
    pub seed: u64,
    pub generator: String,
}

/// One time-marginal sorted once, with prefix sums of `y` and `y²`, so the
/// averages of `c*(y - x)` and `a*(y - x)` over the sample cost `O(log S)`.
#[derive(Debug, Clone)]
pub struct EmpiricalMarginal {
    sorted: Vec<f64>,
    sum1: Vec<f64>,
    sum2: Vec<f64>,
    cost: CostSpec,
}

impl EmpiricalMarginal {
    pub fn new(sample: &[f64], cost: &CostSpec) -> Self {
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut sum1 = Vec::with_capacity(sorted.len() + 1);
        let mut sum2 = Vec::with_capacity(sorted.len() + 1);
        let (mut s1, mut s2) = (0.0, 0.0);
        sum1.push(0.0);
        sum2.push(0.0);
        for &y in &sorted {
            s1 += y;
            s2 += y * y;
            sum1.push(s1);
            sum2.push(s2);
        }
        EmpiricalMarginal {
            sorted,
            sum1,
            sum2,
            cost: *cost,
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Index of the first sample strictly greater than `t`.
    fn upper(&self, t: f64) -> usize {
        self.sorted.partition_point(|&y| y <= t)
    }

    fn segment(&self, lo: usize, hi: usize) -> (f64, f64, f64) {
        (
            (hi - lo) as f64,
            self.sum1[hi] - self.sum1[lo],
            self.sum2[hi] - self.sum2[lo],
        )
    }

    /// `(1/S) Σ_s c*(y_s - x)`.
    pub fn mean_conjugate(&self, x: f64) -> f64 {
        match self.cost.form {
            CostForm::QuadraticCapped => {
                let (k, a) = (self.cost.kappa, self.cost.a_max);
                let knee = k * a;
                let i0 = self.upper(x);
                let i1 = self.upper(x + knee).max(i0);
                let n = self.sorted.len();
                // quadratic part: (y - x)^2 / (2k) = (y^2 - 2xy + x^2) / (2k)
                let (c, s1, s2) = self.segment(i0, i1);
                let quad = ((s2 - 2.0 * x * s1 + c * x * x) / (2.0 * k)).max(0.0);
                // linear part: a (y - x) - k a^2 / 2
                let (c, s1, _) = self.segment(i1, n);
                let lin = a * (s1 - c * x) - c * 0.5 * k * a * a;
                (quad + lin) / n as f64
            }
        }
    }

    /// `(1/S) Σ_s a*(y_s - x)`.
    pub fn mean_argmax(&self, x: f64) -> f64 {
        match self.cost.form {
            CostForm::QuadraticCapped => {
                let (k, a) = (self.cost.kappa, self.cost.a_max);
                let i0 = self.upper(x);
                let i1 = self.upper(x + k * a).max(i0);
                let n = self.sorted.len();
                let (c, s1, _) = self.segment(i0, i1);
                let mid = ((s1 - c * x) / k).max(0.0);
                let top = (n - i1) as f64 * a;
                (mid + top) / n as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let f = MeasureFlow::from_paths(
            grid,
            FlowRole::MeanField,
            &[vec![0.0, 0.1, 1.0 / 3.0, -2.0], vec![1e-7, 2.5, 3.0, 4.0]],
        )
        .unwrap();
        let csv = f.to_csv();
        assert!(csv.starts_with("sample,step,value\n"));
        let g = MeasureFlow::from_csv(&csv, grid, FlowRole::MeanField).unwrap();
        assert_eq!(g.n_samples(), 2);
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        assert_eq!(g.to_csv(), csv);
    }

    #[test]
    fn rejects_ragged_paths() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        assert!(MeasureFlow::from_paths(grid, FlowRole::NPlayer, &[vec![0.0; 3]]).is_err());
        assert!(MeasureFlow::from_paths(grid, FlowRole::NPlayer, &[]).is_err());
    }

    proptest! {
        #[test]
        fn fast_averages_match_brute_force(
            ys in proptest::collection::vec(-5.0f64..5.0, 1..40),
            x in -6.0f64..6.0,
            kappa in 0.2f64..3.0,
            a_max in 0.2f64..3.0,
        ) {
            let cost = CostSpec::quadratic_capped(kappa, a_max).unwrap();
            let m = EmpiricalMarginal::new(&ys, &cost);
            let n = ys.len() as f64;
            let bc = ys.iter().map(|y| cost.conjugate(y - x)).sum::<f64>() / n;
            let ba = ys.iter().map(|y| cost.argmax_intensity(y - x)).sum::<f64>() / n;
            prop_assert!((m.mean_conjugate(x) - bc).abs() <= 1e-9 * (1.0 + bc.abs()));
            prop_assert!((m.mean_argmax(x) - ba).abs() <= 1e-9 * (1.0 + ba.abs()));
        }
    }

    #[test]
    fn averages_at_point_mass() {
        let cost = CostSpec::default();
        let m = EmpiricalMarginal::new(&[3.0; 5], &cost);
        assert_eq!(m.mean_conjugate(3.0), 0.0);
        assert_eq!(m.mean_argmax(3.0), 0.0);
        assert!((m.mean_argmax(2.0) - 1.0).abs() < 1e-15);
        assert!((m.mean_conjugate(2.0) - 0.5).abs() < 1e-15);
    }
}
