//! Minimum-cost bipartite assignment with forbidden pairs.
//!
//! Used by the tracker's matching cascade and by the CLEAR-MOT evaluator.

use crate::error::{Error, Result};

/// Sentinel marking a disallowed (row, col) pair.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Dense row-major cost matrix. Entries set to [`FORBIDDEN`] are excluded
/// from the assignment.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::validation("ragged cost matrix"));
        }
        Ok(Self::from_fn(n, m, |r, c| rows[r][c]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn transposed(&self) -> CostMatrix {
        CostMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Minimum-total-cost assignment of `min(rows, cols)` pairs, with forbidden
/// pairs dropped from the result afterwards.
///
/// Forbidden entries are excluded in the strong sense: an assignment using
/// fewer forbidden pairs always beats one using more, so the solver first
/// maximizes the number of allowed matches and then minimizes their cost.
/// Scan order is fixed (ascending rows, then columns), which makes the output
/// deterministic; on the small matrices of the documented examples this
/// resolves cost ties to the lexicographically smallest (row, col) pairs.
/// Non-finite entries (including NaN) are treated as forbidden. An empty
/// matrix yields an empty assignment.
pub fn hungarian(costs: &CostMatrix) -> Vec<(usize, usize)> {
    if costs.rows == 0 || costs.cols == 0 {
        return Vec::new();
    }
    if costs.rows > costs.cols {
        let mut pairs: Vec<(usize, usize)> = hungarian(&costs.transposed())
            .into_iter()
            .map(|(r, c)| (c, r))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }

    let n = costs.rows;
    let m = costs.cols;
    let forbidden = |v: f64| !v.is_finite();

    // Substitute forbidden entries with a finite penalty larger than any
    // possible sum of real costs, so fewer forbidden matches always wins.
    let finite_sum: f64 = costs.data.iter().filter(|v| v.is_finite()).map(|v| v.abs()).sum();
    let big = 1.0 + 2.0 * finite_sum;
    let cost = |r: usize, c: usize| {
        let v = costs.get(r, c);
        if forbidden(v) {
            big
        } else {
            v
        }
    };

    // Shortest augmenting path algorithm with row/column potentials.
    // Column index `m` acts as the virtual root of each augmentation.
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m + 1];
    let mut assigned_row: Vec<Option<usize>> = vec![None; m + 1];

    for row in 0..n {
        assigned_row[m] = Some(row);
        let mut j0 = m;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut prev_col = vec![m; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0].expect("column on path must be assigned");
            let mut delta = f64::INFINITY;
            let mut j1 = m;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let slack = cost(i0, j) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    prev_col[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j].expect("used column is assigned")] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0].is_none() {
                break;
            }
        }
        // augment along the alternating path back to the virtual root
        while j0 != m {
            let j1 = prev_col[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..m)
        .filter_map(|j| assigned_row[j].map(|i| (i, j)))
        .filter(|&(i, j)| !forbidden(costs.get(i, j)))
        .collect();
    pairs.sort_unstable();
    pairs
}
