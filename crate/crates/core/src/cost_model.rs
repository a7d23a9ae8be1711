//! Switching-cost function `c`, its convex conjugate `c*` and the maximizer `a*`.
//!
//! The agent pays `c(a)` per unit time for an intensity `a` of leaving the
//! current employer. `c` is convex, lower semicontinuous and infinite outside a
//! compact set `[0, a_max]`. Only the quadratic-capped family is implemented,
//! `c(a) = kappa a^2 / 2` on `[0, a_max]`, which has closed forms for both
//! `c*` and `a*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value of an extended-real valued function. `c` is `+inf` outside its
/// effective domain, which is kept as a distinct variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    QuadraticCapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub form: CostForm,
    pub kappa: f64,
    pub a_max: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            form: CostForm::QuadraticCapped,
            kappa: 1.0,
            a_max: 2.0,
        }
    }
}

impl CostSpec {
    pub fn quadratic_capped(kappa: f64, a_max: f64) -> Result<Self> {
        let spec = CostSpec {
            form: CostForm::QuadraticCapped,
            kappa,
            a_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "cost.kappa must be positive and finite, got {}",
                self.kappa
            )));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(Error::Config(format!(
                "cost.a_max must be positive and finite, got {}",
                self.a_max
            )));
        }
        Ok(())
    }

    /// `c(a)`.
    pub fn cost(&self, a: f64) -> ExtendedReal {
        match self.form {
            CostForm::QuadraticCapped => {
                if (0.0..=self.a_max).contains(&a) {
                    ExtendedReal::Finite(0.5 * self.kappa * a * a)
                } else {
                    ExtendedReal::PosInfinity
                }
            }
        }
    }

    /// `c*(y) = sup_{a in [0, a_max]} { a y - c(a) }`.
    pub fn conjugate(&self, y: f64) -> f64 {
        match self.form {
            CostForm::QuadraticCapped => {
                let knee = self.kappa * self.a_max;
                if y <= 0.0 {
                    0.0
                } else if y <= knee {
                    y * y / (2.0 * self.kappa)
                } else {
                    self.a_max * y - 0.5 * self.kappa * self.a_max * self.a_max
                }
            }
        }
    }

    /// `a*(y)`, the unique maximizer in the definition of `c*`.
    pub fn argmax_intensity(&self, y: f64) -> f64 {
        match self.form {
            CostForm::QuadraticCapped => (y / self.kappa).clamp(0.0, self.a_max),
        }
    }

    /// Lipschitz constant of `c*` (equal to the right end of the effort set).
    pub fn conjugate_lipschitz(&self) -> f64 {
        self.a_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyReport {
    /// Largest |closed-form c*(y) - grid sup| over the y grid.
    pub max_gap: f64,
    /// Largest |c*(y_{k+1}) - c*(y_k)| / |y_{k+1} - y_k| over adjacent grid points.
    pub max_lipschitz_ratio: f64,
    /// Largest Fenchel-Young defect |a*(y) y - c(a*(y)) - c*(y)|.
    pub max_fenchel_young_defect: f64,
    /// Theoretical bound a_step * max|y| on the brute-force error.
    pub gap_bound: f64,
    pub a_step: f64,
    pub n_points: usize,
}

/// Brute-force sup over the uniform grid `{0, a_step, ..., a_max}` (endpoint included).
pub fn brute_force_conjugate(spec: &CostSpec, y: f64, a_step: f64) -> f64 {
    let n = (spec.a_max / a_step).floor() as usize;
    let mut best = f64::NEG_INFINITY;
    for k in 0..=n {
        let a = (k as f64 * a_step).min(spec.a_max);
        if let Some(c) = spec.cost(a).finite() {
            best = best.max(a * y - c);
        }
    }
    if let Some(c) = spec.cost(spec.a_max).finite() {
        best = best.max(spec.a_max * y - c);
    }
    best
}

/// Checks the closed-form conjugate against a brute-force sup and measures its Lipschitz ratio.
pub fn verify_conjugacy(spec: &CostSpec, y_grid: &[f64], a_step: f64) -> Result<ConjugacyReport> {
    spec.validate()?;
    if y_grid.is_empty() {
        return Err(Error::Config("y_grid must be nonempty".into()));
    }
    if !(a_step > 0.0 && a_step < spec.a_max) {
        return Err(Error::Config(format!(
            "a_step must lie in (0, a_max), got {a_step}"
        )));
    }
    let mut max_gap: f64 = 0.0;
    let mut max_fy: f64 = 0.0;
    for &y in y_grid {
        let closed = spec.conjugate(y);
        max_gap = max_gap.max((closed - brute_force_conjugate(spec, y, a_step)).abs());
        let a = spec.argmax_intensity(y);
        let c = spec
            .cost(a)
            .finite()
            .expect("a* lies in the effective domain");
        max_fy = max_fy.max((a * y - c - closed).abs());
    }
    let mut max_ratio: f64 = 0.0;
    for w in y_grid.windows(2) {
        let dy = (w[1] - w[0]).abs();
        if dy > 0.0 {
            let dc = (spec.conjugate(w[1]) - spec.conjugate(w[0])).abs();
            max_ratio = max_ratio.max(dc / dy);
        }
    }
    let max_abs_y = y_grid.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    Ok(ConjugacyReport {
        max_gap,
        max_lipschitz_ratio: max_ratio,
        max_fenchel_young_defect: max_fy,
        gap_bound: a_step * max_abs_y,
        a_step,
        n_points: y_grid.len(),
    })
}

/// `[lo, lo + step, ..., hi]` with the count fixed up front, so no drift accumulates.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect()
}
