//! Minimum-cost assignment (Hungarian method with potentials).
//!
//! Rectangular matrices are padded to square with zero-cost dummy rows or
//! columns, so the result is a minimum-cost matching of size `min(n, m)`.
//! Among all optimal matchings the one returned is lexicographically smallest
//! by row: row 0 takes the smallest column it can take in any optimal matching,
//! then row 1, and so on. Optimal matchings are exactly the perfect matchings
//! on the zero-reduced-cost edges of the final dual, so the tie-break only
//! walks that subgraph.

/// Result of [`hungarian`]: `(row, col)` pairs sorted by row, and their total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Solves the assignment problem for an `n × m` matrix of finite costs.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Assignment { pairs: Vec::new(), cost: 0.0 };
    }
    debug_assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    let k = n.max(m);
    let at = |i: usize, j: usize| if i < n && j < m { cost[i][j] } else { 0.0 };

    // Potentials and matching, 1-indexed with column 0 as the virtual root.
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut row_of = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; k];
    let mut row_of_col = vec![0usize; k];
    for j in 1..=k {
        col_of_row[row_of[j] - 1] = j - 1;
        row_of_col[j - 1] = row_of[j] - 1;
    }

    let scale = cost.iter().flatten().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| at(i, j) - u[i + 1] - v[j + 1] <= tol;
    canonicalize(k, &tight, &mut col_of_row, &mut row_of_col);

    let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, col_of_row[i])).filter(|&(_, j)| j < m).collect();
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Assignment { pairs, cost: total }
}

/// Moves each row, in order, to the smallest tight column that still admits a
/// perfect tight matching for the rows after it.
fn canonicalize(
    k: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    col_of_row: &mut [usize],
    row_of_col: &mut [usize],
) {
    for row in 0..k {
        let current = col_of_row[row];
        for col in 0..current {
            let holder = row_of_col[col];
            if holder < row || !tight(row, col) {
                continue;
            }
            // `holder` gives up `col` and must reach the column `row` frees.
            let mut visited = vec![false; k];
            visited[col] = true;
            let mut path = Vec::new();
            if reroute(holder, current, row, tight, col_of_row, row_of_col, &mut visited, &mut path) {
                for &(r, c) in path.iter().rev() {
                    col_of_row[r] = c;
                    row_of_col[c] = r;
                }
                col_of_row[row] = col;
                row_of_col[col] = row;
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    r: usize,
    target: usize,
    fixed_upto: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    col_of_row: &[usize],
    row_of_col: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..col_of_row.len() {
        if visited[c] || !tight(r, c) {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((r, c));
            return true;
        }
        let next = row_of_col[c];
        if next > fixed_upto && reroute(next, target, fixed_upto, tight, col_of_row, row_of_col, visited, path) {
            path.push((r, c));
            return true;
        }
    }
    false
}
