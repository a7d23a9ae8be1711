use super::solver::BsdeSolution;
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{EmpiricalMarginal, MeasureFlow};

/// `α^j = a*(Y^j - Y^i) / (n-1)` toward every regime `j` (entry `i` is 0).
pub fn optimal_intensity_from_values(y: &[f64], regime: usize, cost: &CostSpec, out: &mut [f64]) {
    let n = y.len();
    let scale = 1.0 / (n - 1) as f64;
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == regime {
            0.0
        } else {
            scale * cost.argmax_intensity(y[j] - y[regime])
        };
    }
}

/// Per path, the intensities toward each `j != regime` (in increasing `j`) at step `k`.
pub fn optimal_intensity(
    sol: &BsdeSolution,
    regime: usize,
    step: usize,
    cost: &CostSpec,
) -> Vec<Vec<f64>> {
    let n = sol.n_players;
    let mut y = vec![0.0; n];
    let mut all = vec![0.0; n];
    (0..sol.n_paths)
        .map(|p| {
            for (j, v) in y.iter_mut().enumerate() {
                *v = sol.y(j, p, step);
            }
            optimal_intensity_from_values(&y, regime, cost, &mut all);
            all.iter()
                .enumerate()
                .filter(|(j, _)| *j != regime)
                .map(|(_, a)| *a)
                .collect()
        })
        .collect()
}

/// Mean-field intensity `α*_k = ∫ a*(y - Y_k) p_k(dy)` and survival `β*_k = exp(-Σ_{m<k} α*_m dt)`.
pub fn meanfield_intensity(
    y_path: &[f64],
    p_star: &MeasureFlow,
    cost: &CostSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if y_path.len() != p_star.n_points() {
        return Err(Error::GridMismatch(format!(
            "path has {} points, flow has {}",
            y_path.len(),
            p_star.n_points()
        )));
    }
    let marg = p_star.marginals(cost);
    Ok(meanfield_intensity_with(y_path, &marg, p_star.grid.dt()))
}

pub fn meanfield_intensity_with(
    y_path: &[f64],
    marginals: &[EmpiricalMarginal],
    dt: f64,
) -> (Vec<f64>, Vec<f64>) {
    let alpha: Vec<f64> = y_path
        .iter()
        .zip(marginals)
        .map(|(y, m)| m.mean_argmax(*y))
        .collect();
    let mut beta = Vec::with_capacity(alpha.len());
    let mut acc = 0.0_f64;
    for a in &alpha {
        beta.push((-acc).exp());
        acc += a * dt;
    }
    (alpha, beta)
}
