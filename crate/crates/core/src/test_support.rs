//! Oracles shared by unit tests.

use crate::cost_model::CostSpec;

/// Backward RK4 for `Y' = -[(1/(n-1)) Σ_{j≠i} c*(Y^j - Y^i) + w^i]`, `Y(T) = xi`,
/// returned on the coarse grid `0..=n_steps`.
pub fn ode_oracle(
    xi: &[f64],
    w: &[f64],
    cost: &CostSpec,
    horizon: f64,
    n_steps: usize,
    refine: usize,
) -> Vec<Vec<f64>> {
    let n = xi.len();
    let f = |y: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let c: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| cost.conjugate(y[j] - y[i]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                c + w[i]
            })
            .collect()
    };
    let fine = n_steps * refine;
    let h = horizon / fine as f64;
    let mut y = xi.to_vec();
    let mut out = vec![Vec::new(); n_steps + 1];
    out[n_steps] = y.clone();
    // integrate in reversed time s = T - t: dY/ds = f(Y)
    for step in 1..=fine {
        let add = |a: &[f64], b: &[f64], s: f64| {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<_>>()
        };
        let k1 = f(&y);
        let k2 = f(&add(&y, &k1, h / 2.0));
        let k3 = f(&add(&y, &k2, h / 2.0));
        let k4 = f(&add(&y, &k3, h));
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % refine == 0 {
            out[n_steps - step / refine] = y.clone();
        }
    }
    out
}
