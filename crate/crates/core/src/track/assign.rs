//! Frame-to-frame matching: greedy nearest neighbour and the Hungarian method.

use crate::domain::Point;

/// Minimum-cost assignment on a rectangular cost matrix. Pairs with cost above
/// `cutoff` (or non-finite) are forbidden. Every row and column may instead
/// stay unmatched at `unmatched_cost`; with `None` the number of matches is
/// maximized first and the cost second.
///
/// Returns `(row, col)` pairs sorted by row.
pub fn solve_assignment(
    cost: &[Vec<f64>],
    cutoff: f64,
    unmatched_cost: Option<f64>,
) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    let admissible = |c: f64| c.is_finite() && c <= cutoff;
    let sum_abs: f64 = cost
        .iter()
        .flatten()
        .filter(|&&c| admissible(c))
        .map(|c| c.abs())
        .sum();
    let dummy = unmatched_cost.unwrap_or(sum_abs + 1.0);
    let n = rows + cols;
    let forbidden = 2.0 * (sum_abs + 2.0 * n as f64 * dummy.abs() + 1.0);

    // rows: real then one dummy per column; cols: real then one dummy per row
    let mut m = vec![vec![forbidden; n]; n];
    for i in 0..rows {
        for j in 0..cols {
            if admissible(cost[i][j]) {
                m[i][j] = cost[i][j];
            }
        }
        m[i][cols + i] = dummy;
    }
    for j in 0..cols {
        m[rows + j][j] = dummy;
        for k in 0..rows {
            m[rows + j][cols + k] = 0.0;
        }
    }

    let col_of_row = hungarian(&m);
    let mut out: Vec<(usize, usize)> = (0..rows)
        .filter_map(|i| {
            let j = col_of_row[i];
            (j < cols && admissible(cost[i][j])).then_some((i, j))
        })
        .collect();
    out.sort_unstable();
    out
}

/// Square minimization, `O(n³)` with row/column potentials. Returns the
/// column assigned to each row.
fn hungarian(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    col_of_row
}

/// Each point of `from` maps to its nearest point of `to` within `max_dist`
/// (ties go to the lower index). Several sources may share a target.
pub fn associate_nearest(from: &[Point], to: &[Point], max_dist: f64) -> Vec<Option<usize>> {
    from.iter()
        .map(|&a| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &b) in to.iter().enumerate() {
                let d = a.dist(b);
                if d <= max_dist && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}

/// One-to-one matching minimizing total distance among pairs no farther
/// than `cutoff`, with as many matches as possible.
pub fn associate_hungarian(from: &[Point], to: &[Point], cutoff: f64) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = from
        .iter()
        .map(|&a| to.iter().map(|&b| a.dist(b)).collect())
        .collect();
    solve_assignment(&cost, cutoff, None)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn total(cost: &[Vec<f64>], m: &[(usize, usize)]) -> f64 {
        m.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    #[test]
    fn examples() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let m = solve_assignment(&c, f64::INFINITY, None);
        assert_eq!(m, vec![(0, 0), (1, 1)]);
        assert_eq!(total(&c, &m), 2.0);
        let c = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(
            solve_assignment(&c, f64::INFINITY, None),
            vec![(0, 0), (1, 1)]
        );
        let c = vec![vec![5.0, 6.0], vec![7.0, 8.0]];
        assert!(solve_assignment(&c, 4.0, None).is_empty());
        assert!(solve_assignment(&[], 1.0, None).is_empty());
    }

    #[test]
    fn unmatched_cost_trades_off_matches() {
        let c = vec![vec![-3.0, -1.5], vec![-2.0, 0.5]];
        // (0,0) alone −3, (0,0)+(1,1) −2.5, (0,1)+(1,0) −3.5
        assert_eq!(
            solve_assignment(&c, f64::INFINITY, Some(0.0)),
            vec![(0, 1), (1, 0)]
        );
        // only non-positive pairs allowed and leaving unmatched is free
        let c = vec![vec![-3.0, f64::INFINITY], vec![f64::INFINITY, 1.0]];
        assert_eq!(solve_assignment(&c, 0.0, Some(0.0)), vec![(0, 0)]);
    }

    #[test]
    fn rectangular_prefers_more_matches() {
        let c = vec![vec![1.0, 9.0, 2.0]];
        assert_eq!(solve_assignment(&c, f64::INFINITY, None), vec![(0, 0)]);
        let c = vec![vec![1.0, 1.5], vec![1.2, 20.0]];
        // max cardinality beats the single cheapest pair
        assert_eq!(solve_assignment(&c, 10.0, None), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn nearest_examples() {
        let a = [Point::new(0.0, 0.0), Point::new(100.0, 0.0)];
        let b = [Point::new(101.0, 0.0), Point::new(1.0, 0.0)];
        assert_eq!(associate_nearest(&a, &b, 5.0), vec![Some(1), Some(0)]);
        let a = [Point::new(0.0, 0.0), Point::new(2.0, 0.0)];
        let b = [Point::new(1.0, 0.0)];
        assert_eq!(associate_nearest(&a, &b, 5.0), vec![Some(0), Some(0)]);
        assert_eq!(associate_nearest(&a, &b, 0.5), vec![None, None]);
    }

    #[test]
    fn hungarian_points() {
        let a = [Point::new(0.0, 0.0), Point::new(10.0, 0.0)];
        let b = [
            Point::new(10.5, 0.0),
            Point::new(0.5, 0.0),
            Point::new(50.0, 0.0),
        ];
        assert_eq!(associate_hungarian(&a, &b, 2.0), vec![(0, 1), (1, 0)]);
    }

    fn brute_min(cost: &[Vec<f64>]) -> f64 {
        // square matrices only: minimum over all permutations
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.len()])
    }

    proptest! {
        #[test]
        fn optimal_on_square_matrices(
            n in 1usize..6,
            vals in proptest::collection::vec(-10.0f64..10.0, 36),
        ) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| vals[i * 6..i * 6 + n].to_vec()).collect();
            let m = solve_assignment(&cost, f64::INFINITY, None);
            prop_assert_eq!(m.len(), n);
            prop_assert!((total(&cost, &m) - brute_min(&cost)).abs() < 1e-9);
        }

        #[test]
        fn constant_shift_keeps_the_argmin(
            rows in 1usize..5, cols in 1usize..5,
            vals in proptest::collection::vec(0.0f64..10.0, 25),
            shift in -50.0f64..50.0,
        ) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|i| vals[i * 5..i * 5 + cols].to_vec()).collect();
            let shifted: Vec<Vec<f64>> =
                cost.iter().map(|r| r.iter().map(|c| c + shift).collect()).collect();
            let a = solve_assignment(&cost, f64::INFINITY, None);
            let b = solve_assignment(&shifted, f64::INFINITY, None);
            prop_assert_eq!(a.len(), b.len());
            prop_assert!((total(&cost, &a) - total(&cost, &b)).abs() < 1e-9);
        }
    }
}
