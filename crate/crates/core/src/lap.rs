//! Rectangular linear assignment: exact shortest-augmenting-path solver and
//! the sequential greedy heuristic.
//!
//! The exact solver grows one row at a time along a Dijkstra shortest path in
//! the reduced-cost graph (Jonker–Volgenant style, without the square padding
//! and without the initialization heuristics). Cost `O(m² n)`.

use crate::error::{contract, Error, Result};

/// Dense row-major cost matrix with `rows ≤ cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input("cost matrix must be non-empty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite cost {} at ({}, {})",
                data[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("ragged cost matrix".into()));
        }
        Self::new(m, n, rows.concat())
    }

    /// Builds a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// The transposed matrix (columns become rows).
    pub fn transpose(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        CostMatrix { rows: self.cols, cols: self.rows, data }
    }

    fn check_shape(&self) -> Result<()> {
        if self.rows > self.cols {
            return contract(format!(
                "assignment needs rows <= cols, got {}x{}",
                self.rows, self.cols
            ));
        }
        Ok(())
    }
}

/// A complete matching of every row to a distinct column.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `col_of_row[u]` is the supply index matched to demand vertex `u`.
    pub col_of_row: Vec<usize>,
    pub per_vertex_cost: Vec<f64>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_cols(cost: &CostMatrix, col_of_row: Vec<usize>) -> Self {
        let per_vertex_cost: Vec<f64> =
            col_of_row.iter().enumerate().map(|(i, &j)| cost.get(i, j)).collect();
        let total_cost = per_vertex_cost.iter().sum();
        Self { col_of_row, per_vertex_cost, total_cost }
    }
}

/// Minimum-cost matching of all rows.
pub fn solve_exact(cost: &CostMatrix) -> Result<Assignment> {
    cost.check_shape()?;
    let (m, n) = (cost.rows, cost.cols);
    const FREE: usize = usize::MAX;

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut col_of_row = vec![FREE; m];
    let mut row_of_col = vec![FREE; n];

    let mut shortest = vec![f64::INFINITY; n];
    let mut path = vec![FREE; n];
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for cur in 0..m {
        shortest.fill(f64::INFINITY);
        path.fill(FREE);
        row_done.fill(false);
        col_done.fill(false);
        remaining.clear();
        remaining.extend(0..n);

        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            row_done[i] = true;
            let row = cost.row(i);
            let mut lowest = f64::INFINITY;
            let mut best = usize::MAX;
            for (slot, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                let sj = shortest[j];
                if sj < lowest || (sj == lowest && best != usize::MAX && j < remaining[best]) {
                    lowest = sj;
                    best = slot;
                }
            }
            if best == usize::MAX || !lowest.is_finite() {
                return Err(Error::Numeric("no augmenting path found".into()));
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            col_done[j] = true;
            if row_of_col[j] == FREE {
                break j;
            }
            i = row_of_col[j];
        };

        u[cur] += min_val;
        for r in 0..m {
            if row_done[r] && r != cur {
                u[r] += min_val - shortest[col_of_row[r]];
            }
        }
        for c in 0..n {
            if col_done[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_of_col[j] = r;
            let prev = std::mem::replace(&mut col_of_row[r], j);
            if r == cur {
                break;
            }
            j = prev;
        }
    }
    Ok(Assignment::from_cols(cost, col_of_row))
}

/// Sequential greedy matching: rows pick, in `order`, their cheapest
/// still-free column (lowest index on ties).
pub fn solve_greedy(cost: &CostMatrix, order: &[usize]) -> Result<Assignment> {
    cost.check_shape()?;
    let m = cost.rows;
    let mut seen = vec![false; m];
    if order.len() != m || order.iter().any(|&r| r >= m || std::mem::replace(&mut seen[r], true)) {
        return Err(Error::Input(format!("order must be a permutation of 0..{m}")));
    }
    let mut taken = vec![false; cost.cols];
    let mut col_of_row = vec![0; m];
    for &r in order {
        let (best, _) = cost
            .row(r)
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .fold((usize::MAX, f64::INFINITY), |acc, (j, &c)| if c < acc.1 { (j, c) } else { acc });
        taken[best] = true;
        col_of_row[r] = best;
    }
    Ok(Assignment::from_cols(cost, col_of_row))
}

/// Exhaustive minimum over all injective assignments. Exponential; for tests
/// and tiny instances only.
pub fn solve_brute_force(cost: &CostMatrix) -> Result<f64> {
    cost.check_shape()?;
    fn rec(cost: &CostMatrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.rows {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.cols {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.cols], 0.0, &mut best);
    Ok(best)
}
