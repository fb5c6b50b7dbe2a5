//! Rectangular minimum-cost linear assignment (Hungarian method with
//! potentials, O(n^2 m)).

/// Optimal assignment for a `rows x cols` cost matrix given row-major.
/// Returns, for each row, the column it is assigned to; when there are more
/// rows than columns some rows stay unassigned.
pub fn solve(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols, "cost matrix shape");
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = cost[r * cols + c];
            }
        }
        let by_col = solve(&t, cols, rows);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // rows <= cols. 1-based arrays with a virtual column 0.
    let (n, m) = (rows, cols);
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
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
            for j in 0..=m {
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[f64], cols: usize, a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| cost[r * cols + c]))
            .sum()
    }

    fn brute(cost: &[f64], rows: usize, cols: usize) -> f64 {
        // Rows <= cols: try every injective map of rows into columns.
        fn go(r: usize, rows: usize, cols: usize, cost: &[f64], used: &mut Vec<bool>) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r * cols + c] + go(r + 1, rows, cols, cost, used));
                    used[c] = false;
                }
            }
            best
        }
        go(0, rows, cols, cost, &mut vec![false; cols])
    }

    #[test]
    fn matches_brute_force_on_small_matrices() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for rows in 1..=4 {
            for cols in rows..=5 {
                for _ in 0..30 {
                    let cost: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
                    let a = solve(&cost, rows, cols);
                    assert!((total(&cost, cols, &a) - brute(&cost, rows, cols)).abs() < 1e-12);
                    let mut seen: Vec<usize> = a.iter().flatten().copied().collect();
                    seen.sort();
                    seen.dedup();
                    assert_eq!(seen.len(), rows);
                }
            }
        }
    }

    #[test]
    fn tall_matrices_leave_rows_unassigned() {
        let cost = [1.0, 0.0, 5.0];
        let a = solve(&cost, 3, 1);
        assert_eq!(a, vec![None, Some(0), None]);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(solve(&[], 0, 3), Vec::<Option<usize>>::new());
        assert_eq!(solve(&[], 2, 0), vec![None, None]);
    }
}
