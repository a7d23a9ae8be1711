use std::sync::Arc;

use super::regression::Standardizer;
use crate::cost_model::CostSpec;
use crate::stochastic_core::EmpiricalMarginal;

/// Where the driver's interaction term comes from.
#[derive(Debug, Clone)]
pub enum Coupling {
    /// `(1/(n-1)) Σ_{j≠i} c*(Y^j - Y^i)` over the other players.
    Players,
    /// `∫ c*(y - Y) p_k(dy)` against a fixed flow.
    Flow(Arc<Vec<EmpiricalMarginal>>),
}

/// Regressors for player `i` at step `k`: powers of the standardized own
/// state, the cross-sectional mean of states, the interaction term evaluated
/// at the states, and the player's initial value.
#[derive(Debug, Clone)]
pub struct FeatureModel {
    pub degree: usize,
    pub cost: CostSpec,
    pub coupling: Coupling,
    pub n_players: usize,
}

/// Normalization fitted for one `(player, step)`.
#[derive(Debug, Clone, Default)]
pub struct FeatureNorm {
    pub s_mean: f64,
    pub s_inv_sd: f64,
    pub std: Standardizer,
}

impl FeatureModel {
    pub fn raw_width(&self) -> usize {
        match self.coupling {
            Coupling::Players if self.n_players > 1 => self.degree + 3,
            _ => self.degree + 2,
        }
    }

    /// Raw (unstandardized) regressors; `states[j]` is player `j`'s state at step `k`.
    pub fn raw(
        &self,
        i: usize,
        k: usize,
        states: &[f64],
        y0: f64,
        s_mean: f64,
        s_inv_sd: f64,
        out: &mut [f64],
    ) {
        let s = states[i];
        let z = (s - s_mean) * s_inv_sd;
        let mut pw = 1.0;
        for o in out.iter_mut().take(self.degree) {
            pw *= z;
            *o = pw;
        }
        let mut c = self.degree;
        match &self.coupling {
            Coupling::Players if self.n_players > 1 => {
                let n = self.n_players;
                out[c] = states.iter().sum::<f64>() / n as f64;
                c += 1;
                let mut acc = 0.0;
                for (j, &sj) in states.iter().enumerate() {
                    if j != i {
                        acc += self.cost.conjugate(sj - s);
                    }
                }
                out[c] = acc / (n - 1) as f64;
            }
            Coupling::Players => out[c] = 0.0,
            Coupling::Flow(m) => out[c] = m[k].mean_conjugate(s),
        }
        out[c + 1] = y0;
    }

    /// Standardized feature row with a leading intercept.
    pub fn row(&self, norm: &FeatureNorm, raw: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let start = out.len();
        out.resize(start + norm.std.width(), 0.0);
        norm.std.apply(raw, &mut out[start..]);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
