use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assignment::solve_assignment;
use super::MeasureFlow;
use crate::error::{Error, Result};

/// Default largest sample count for the exact path distance.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Exact,
    Coupled,
}

/// W2 between two equal-size samples on the line, via sorted pairing.
pub fn w2_marginal(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "w2_marginal sample sizes",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Config(
            "w2_marginal needs at least one sample".into(),
        ));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let s: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((s / a.len() as f64).sqrt())
}

fn check_pair(a: &MeasureFlow, b: &MeasureFlow, from_step: usize) -> Result<()> {
    a.check_same_grid(b)?;
    if a.n_samples() != b.n_samples() {
        return Err(Error::LengthMismatch {
            what: "flow sample counts",
            left: a.n_samples(),
            right: b.n_samples(),
        });
    }
    if from_step > a.grid.n_steps {
        return Err(Error::Config(format!(
            "from_step {from_step} beyond the last grid step {}",
            a.grid.n_steps
        )));
    }
    Ok(())
}

#[inline]
fn sup_sq(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y) * (x - y)))
}

/// Row-major `n x n` matrix of `sup_{u >= from_step} |a_i(u) - b_j(u)|^2`.
pub fn sup_cost_matrix(a: &MeasureFlow, b: &MeasureFlow, from_step: usize) -> Vec<f64> {
    let n = a.n_samples();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pa = &a.path(i)[from_step..];
            (0..n).map(move |j| sup_sq(pa, &b.path(j)[from_step..]))
        })
        .collect()
}

pub fn w2_path_exact(a: &MeasureFlow, b: &MeasureFlow, from_step: usize) -> Result<f64> {
    w2_path_exact_capped(a, b, from_step, DEFAULT_ASSIGNMENT_CAP)
}

/// `d_t(a, b)` with the grid sup-norm cost from `from_step`, by exact assignment.
pub fn w2_path_exact_capped(
    a: &MeasureFlow,
    b: &MeasureFlow,
    from_step: usize,
    cap: usize,
) -> Result<f64> {
    check_pair(a, b, from_step)?;
    let n = a.n_samples();
    if n > cap {
        return Err(Error::AssignmentCap { n, cap });
    }
    let cost = sup_cost_matrix(a, b, from_step);
    let (total, _) = solve_assignment(&cost, n);
    Ok((total.max(0.0) / n as f64).sqrt())
}

/// Squared exact distances `d_u^2(a, b)` for every `u = 0..=n_steps`.
pub fn w2_path_exact_sq_all(a: &MeasureFlow, b: &MeasureFlow, cap: usize) -> Result<Vec<f64>> {
    check_pair(a, b, 0)?;
    let n = a.n_samples();
    if n > cap {
        return Err(Error::AssignmentCap { n, cap });
    }
    let width = a.n_points();
    // suffix[(u * n + i) * n + j] = sup_{v >= u} |a_i(v) - b_j(v)|^2
    let pair_suffix: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (pa, pb) = (a.path(ij / n), b.path(ij % n));
            let mut out = vec![0.0; width];
            let mut m = 0.0_f64;
            for u in (0..width).rev() {
                m = m.max((pa[u] - pb[u]) * (pa[u] - pb[u]));
                out[u] = m;
            }
            out
        })
        .collect();
    Ok((0..width)
        .into_par_iter()
        .map(|u| {
            let cost: Vec<f64> = pair_suffix.iter().map(|s| s[u]).collect();
            solve_assignment(&cost, n).0.max(0.0) / n as f64
        })
        .collect())
}

/// Index-coupled upper bound on `d_t(a, b)`.
pub fn w2_path_coupled(a: &MeasureFlow, b: &MeasureFlow, from_step: usize) -> Result<f64> {
    check_pair(a, b, from_step)?;
    let n = a.n_samples();
    let s: f64 = (0..n)
        .map(|i| sup_sq(&a.path(i)[from_step..], &b.path(i)[from_step..]))
        .sum();
    Ok((s / n as f64).sqrt())
}

/// Exact distance when `n <= cap`, the coupled bound otherwise.
pub fn w2_path_auto(
    a: &MeasureFlow,
    b: &MeasureFlow,
    from_step: usize,
    cap: usize,
) -> Result<(f64, DistanceKind)> {
    if a.n_samples() <= cap {
        Ok((
            w2_path_exact_capped(a, b, from_step, cap)?,
            DistanceKind::Exact,
        ))
    } else {
        Ok((w2_path_coupled(a, b, from_step)?, DistanceKind::Coupled))
    }
}

/// `max_k w2_marginal(a_k, b_k)`.
pub fn w2_marginal_sup(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    check_pair(a, b, 0)?;
    let mut best = 0.0_f64;
    for k in 0..a.n_points() {
        best = best.max(w2_marginal(&a.marginal(k), &b.marginal(k))?);
    }
    Ok(best)
}
