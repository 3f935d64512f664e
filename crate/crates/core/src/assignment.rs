//! Minimum-cost rectangular assignment (Hungarian method with potentials).

/// Returns, for each row, the assigned column. Every row gets a column when
/// rows <= columns; otherwise every column gets a row and the rest are `None`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let by_col = min_cost_assignment(&transposed);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // 1-based potentials; way[j] is the previous column on the augmenting path
    let n = rows;
    let m = cols;
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
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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

pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, k: usize) -> f64 {
            if r == cost.len() || k == 0 {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            // the row may stay unassigned only when rows outnumber columns
            if cost.len() - r > k {
                best = rec(cost, r + 1, used, k);
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + rec(cost, r + 1, used, k - 1));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cols], rows.min(cols))
    }

    #[test]
    fn small_square() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost);
        assert_eq!(assignment_cost(&cost, &a), 5.0);
    }

    #[test]
    fn rectangular_both_ways() {
        let cost = vec![vec![1.0, 9.0, 9.0, 0.5]];
        assert_eq!(min_cost_assignment(&cost), vec![Some(3)]);
        let t = vec![vec![1.0], vec![9.0], vec![0.5]];
        assert_eq!(min_cost_assignment(&t), vec![None, None, Some(0)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 1usize..6, cols in 1usize..6, seed in proptest::collection::vec(0.0f64..10.0, 36)) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| seed[r * 6 + c]).collect()).collect();
            let a = min_cost_assignment(&cost);
            let assigned = a.iter().filter(|c| c.is_some()).count();
            prop_assert_eq!(assigned, rows.min(cols));
            let mut seen: Vec<usize> = a.iter().flatten().copied().collect();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), assigned);
            prop_assert!((assignment_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
