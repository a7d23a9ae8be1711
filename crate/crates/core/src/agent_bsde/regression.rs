use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub degree: usize,
    pub ridge: f64,
    pub tol_picard: f64,
    pub max_picard: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            degree: 2,
            ridge: 1e-10,
            tol_picard: 1e-6,
            max_picard: 50,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 || self.degree > 8 {
            return Err(Error::Config(format!(
                "regression.degree must be in 1..=8, got {}",
                self.degree
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config("regression.ridge must be >= 0".into()));
        }
        if !(self.tol_picard > 0.0) {
            return Err(Error::Config("regression.tol_picard must be > 0".into()));
        }
        if self.max_picard == 0 {
            return Err(Error::Config("regression.max_picard must be >= 1".into()));
        }
        Ok(())
    }
}

/// Relative pivot below which a (scaled) column is treated as a linear
/// combination of the columns already kept.
const PIVOT_TOL: f64 = 1e-9;

/// Factored normal equations `(D'D/M + ridge I) c = D'y/M` for one design
/// matrix. Columns are scaled to unit second moment; columns that add no new
/// direction are dropped (their coefficient is 0).
#[derive(Debug, Clone)]
pub struct LeastSquares {
    n_cols: usize,
    kept: Vec<usize>,
    scale: Vec<f64>,
    chol: Vec<f64>,
}

impl LeastSquares {
    /// `design` is row-major `m x q`. The ridge is not applied to the columns
    /// listed in `required`. Returns `None` when one of them cannot be kept or
    /// there are fewer rows than kept columns.
    pub fn fit(design: &[f64], m: usize, q: usize, ridge: f64, required: &[usize]) -> Option<Self> {
        debug_assert_eq!(design.len(), m * q);
        let mut gram = vec![0.0; q * q];
        for row in design.chunks_exact(q) {
            for a in 0..q {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let g = &mut gram[a * q..a * q + a + 1];
                for (b, gv) in g.iter_mut().enumerate() {
                    *gv += ra * row[b];
                }
            }
        }
        let inv_m = 1.0 / m as f64;
        let scale: Vec<f64> = (0..q)
            .map(|a| {
                let d = gram[a * q + a] * inv_m;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let g = |a: usize, b: usize| -> f64 {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            gram[hi * q + lo] * inv_m * scale[a] * scale[b]
        };
        let mut kept: Vec<usize> = Vec::with_capacity(q);
        let mut chol: Vec<f64> = Vec::new();
        for a in 0..q {
            if scale[a] == 0.0 {
                continue;
            }
            let r = kept.len();
            let mut row = vec![0.0; r + 1];
            for (s, &b) in kept.iter().enumerate() {
                let mut v = g(a, b);
                for t in 0..s {
                    v -= row[t] * chol[s * q + t];
                }
                row[s] = v / chol[s * q + s];
            }
            let ra = if required.contains(&a) { 0.0 } else { ridge };
            let pivot = 1.0 + ra - row[..r].iter().map(|v| v * v).sum::<f64>();
            if pivot <= PIVOT_TOL + ra {
                continue;
            }
            row[r] = pivot.sqrt();
            if chol.len() < (r + 1) * q {
                chol.resize((r + 1) * q, 0.0);
            }
            chol[r * q..r * q + r + 1].copy_from_slice(&row);
            kept.push(a);
        }
        if kept.len() > m || required.iter().any(|c| !kept.contains(c)) {
            return None;
        }
        Some(LeastSquares {
            n_cols: q,
            kept,
            scale,
            chol,
        })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Coefficients for the target `y` (length `m`), zero on dropped columns.
    pub fn solve(&self, design: &[f64], y: &[f64]) -> Vec<f64> {
        let q = self.n_cols;
        let mut rhs = vec![0.0; q];
        for (row, &yv) in design.chunks_exact(q).zip(y) {
            for &a in &self.kept {
                rhs[a] += row[a] * yv;
            }
        }
        self.solve_moments(&rhs, y.len())
    }

    /// Coefficients from the raw moments `rhs = D'y` over `m` rows.
    pub fn solve_moments(&self, rhs: &[f64], m: usize) -> Vec<f64> {
        let q = self.n_cols;
        let r = self.kept.len();
        let inv_m = 1.0 / m as f64;
        let mut z: Vec<f64> = self
            .kept
            .iter()
            .map(|&a| rhs[a] * inv_m * self.scale[a])
            .collect();
        for s in 0..r {
            let mut v = z[s];
            for t in 0..s {
                v -= self.chol[s * q + t] * z[t];
            }
            z[s] = v / self.chol[s * q + s];
        }
        for s in (0..r).rev() {
            let mut v = z[s];
            for t in s + 1..r {
                v -= self.chol[t * q + s] * z[t];
            }
            z[s] = v / self.chol[s * q + s];
        }
        let mut coef = vec![0.0; q];
        for (s, &a) in self.kept.iter().enumerate() {
            coef[a] = z[s] * self.scale[a];
        }
        coef
    }
}

/// Per-column centering and scaling of raw regressors, with constant columns removed.
#[derive(Debug, Clone, Default)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub active: Vec<usize>,
}

impl Standardizer {
    /// `raw` is row-major `m x p`.
    pub fn fit(raw: &[f64], m: usize, p: usize) -> Self {
        let mut mean = vec![0.0; p];
        for row in raw.chunks_exact(p) {
            for (a, v) in row.iter().enumerate() {
                mean[a] += v;
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0; p];
        for row in raw.chunks_exact(p) {
            for a in 0..p {
                var[a] += (row[a] - mean[a]).powi(2);
            }
        }
        let mut inv_std = vec![0.0; p];
        let mut active = Vec::new();
        for a in 0..p {
            let sd = (var[a] / m as f64).sqrt();
            if sd > 1e-12 * (1.0 + mean[a].abs()) {
                inv_std[a] = 1.0 / sd;
                active.push(a);
            }
        }
        Standardizer {
            mean,
            inv_std,
            active,
        }
    }

    pub fn width(&self) -> usize {
        self.active.len()
    }

    /// Writes the standardized active entries of one raw row.
    pub fn apply(&self, raw_row: &[f64], out: &mut [f64]) {
        for (o, &a) in out.iter_mut().zip(&self.active) {
            *o = (raw_row[a] - self.mean[a]) * self.inv_std[a];
        }
    }
}
