//! Dense linear assignment via the Hungarian method with potentials, O(n^3).
//!
//! Among all optimal assignments the lexicographically smallest one is
//! returned: optimal assignments are exactly the perfect matchings on the
//! edges that are tight under the optimal duals, so rows are fixed greedily to
//! their smallest tight column that still admits a perfect matching.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    pub cost: Array2<f64>,
    pub sense: Sense,
}

impl AssignmentProblem {
    pub fn new(cost: Array2<f64>, sense: Sense) -> Self {
        AssignmentProblem { cost, sense }
    }

    /// `sum_i cost[i, perm[i]]`.
    pub fn objective(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.cost[[i, j]]).sum()
    }
}

/// Optimal `perm` (row `i` assigned to column `perm[i]`) and its objective.
pub fn solve_assignment(prob: &AssignmentProblem) -> Result<(Vec<usize>, f64)> {
    let (n, m) = prob.cost.dim();
    if n != m {
        return Err(Error::dimension(format!("assignment matrix must be square, got {n}x{m}")));
    }
    if prob.cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::config("assignment matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let cost = match prob.sense {
        Sense::Minimize => prob.cost.clone(),
        Sense::Maximize => prob.cost.mapv(|c| -c),
    };
    let (perm, u, v) = hungarian(&cost);
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * (1.0 + scale) * n as f64;
    let lex = lexicographic(&cost, &u, &v, &perm, tol);
    let value = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>();
    let best = if value(&lex) <= value(&perm) { lex } else { perm };
    let objective = prob.objective(&best);
    Ok((best, objective))
}

/// Returns the assignment and the row/column potentials (reduced costs
/// `c[i][j] - u[i] - v[j]` are nonnegative and zero on the assignment).
fn hungarian(a: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row (1-based) matched to column j; way[j]: previous column on the path
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
                if !used[j] {
                    let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching on the tight edges.
fn lexicographic(a: &Array2<f64>, u: &[f64], v: &[f64], start: &[usize], tol: f64) -> Vec<usize> {
    let n = a.nrows();
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| a[[i, j]] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut row_of = vec![usize::MAX; n];
    let mut col_of = start.to_vec();
    for (i, &j) in start.iter().enumerate() {
        row_of[j] = i;
    }
    for i in 0..n {
        for &j in &tight[i] {
            if j >= col_of[i] {
                break;
            }
            // Give column j to row i; its owner r must reach the freed column
            // through rows > i without using column j.
            let r = row_of[j];
            if r < i {
                continue;
            }
            let freed = col_of[i];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if augment(r, freed, i, &tight, &col_of, &row_of, &mut visited, &mut path) {
                // path holds (row, new column) pairs
                for (row, col) in path {
                    col_of[row] = col;
                    row_of[col] = row;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
    }
    col_of
}

/// DFS for an alternating path moving `row` onto a new column and ending at
/// `target`; rows `<= fixed` are not reassigned.
#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    fixed: usize,
    tight: &[Vec<usize>],
    col_of: &[usize],
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for &c in &tight[row] {
        if visited[c] || c == col_of[row] {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let owner = row_of[c];
        if owner > fixed && augment(owner, target, fixed, tight, col_of, row_of, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_favoring() {
        let c = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let (p, obj) = solve_assignment(&AssignmentProblem::new(c, Sense::Minimize)).unwrap();
        assert_eq!(p, vec![0, 1, 2, 3]);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn two_by_two() {
        let (p, obj) = solve_assignment(&AssignmentProblem::new(array![[1.0, 2.0], [2.0, 1.0]], Sense::Minimize)).unwrap();
        assert_eq!(p, vec![0, 1]);
        assert_eq!(obj, 2.0);
        let (p, obj) = solve_assignment(&AssignmentProblem::new(array![[1.0, 2.0], [2.0, 1.0]], Sense::Maximize)).unwrap();
        assert_eq!(p, vec![1, 0]);
        assert_eq!(obj, 4.0);
    }

    #[test]
    fn ties_pick_lexicographic_smallest() {
        let c = Array2::<f64>::zeros((5, 5));
        let (p, _) = solve_assignment(&AssignmentProblem::new(c, Sense::Minimize)).unwrap();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
        // Optimum 14 is reached by four assignments; [0, 2, 1] is the smallest.
        let c = array![[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [9.0, 9.0, 0.0]];
        let (p, obj) = solve_assignment(&AssignmentProblem::new(c, Sense::Maximize)).unwrap();
        assert_eq!(p, vec![0, 2, 1]);
        assert_eq!(obj, 14.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_assignment(&AssignmentProblem::new(Array2::zeros((2, 3)), Sense::Minimize)).is_err());
        let c = array![[1.0, f64::NAN], [0.0, 1.0]];
        assert!(matches!(
            solve_assignment(&AssignmentProblem::new(c, Sense::Minimize)),
            Err(Error::Config(_))
        ));
    }
}
