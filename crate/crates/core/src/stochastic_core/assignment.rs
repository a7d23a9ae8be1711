//! Minimum-cost perfect assignment on a dense square matrix of finite floats
//! (Hungarian method with row/column potentials, `O(n^3)`).

/// Returns `(total cost, col_of_row)` minimizing `Σ_i cost[i][col_of_row[i]]`.
/// `cost` is row-major `n x n`.
pub fn solve_assignment(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based arrays; p[j] is the row matched to column j, 0 meaning free.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    let total = col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (total, col_of_row)
}

#[cfg(test)]
pub(crate) fn brute_force_assignment(cost: &[f64], n: usize) -> f64 {
    fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two() {
        let (v, a) = solve_assignment(&[1.0, 4.0, 4.0, 1.0], 2);
        assert_eq!(v, 2.0);
        assert_eq!(a, vec![0, 1]);
        let (v, a) = solve_assignment(&[5.0, 1.0, 1.0, 5.0], 2);
        assert_eq!(v, 2.0);
        assert_eq!(a, vec![1, 0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..7, seed in proptest::collection::vec(0.0f64..10.0, 36)) {
            let cost: Vec<f64> = seed[..n * n].to_vec();
            let (v, a) = solve_assignment(&cost, n);
            let mut seen = a.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((v - brute_force_assignment(&cost, n)).abs() < 1e-9);
        }
    }
}
