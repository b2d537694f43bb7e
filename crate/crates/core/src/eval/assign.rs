//! Maximum-weight bipartite assignment (Hungarian algorithm).

/// Finds a one-to-one assignment of rows to columns maximizing the total
/// weight. Rectangular inputs are padded with zero-weight dummies, so every
/// row of a tall matrix may end up unmatched.
///
/// Returns the total weight and, for each row, its matched column.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return (0.0, vec![None; rows]);
    }
    let w = |i: usize, j: usize| -> f64 { weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0) };
    let max = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| w(i, j)).fold(0.0f64, f64::max);
    // Minimize max - w over the padded square matrix. 1-based potentials as
    // in the classic O(n^3) formulation.
    let cost = |i: usize, j: usize| max - w(i, j);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
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
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut assignment = vec![None; rows];
    for (j, &i) in p.iter().enumerate().skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    let total = assignment.iter().enumerate().filter_map(|(i, j)| j.map(|j| w(i, j))).sum();
    (total, assignment)
}

/// Greedy matching: repeatedly take the heaviest remaining pair.
pub fn greedy_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let mut pairs: Vec<(f64, usize, usize)> =
        weights.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().map(move |(j, w)| (*w, i, j))).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let mut row_used = vec![None; weights.len()];
    let mut col_used = vec![false; cols];
    let mut total = 0.0;
    for (w, i, j) in pairs {
        if row_used[i].is_none() && !col_used[j] {
            row_used[i] = Some(j);
            col_used[j] = true;
            total += w;
        }
    }
    (total, row_used)
}
