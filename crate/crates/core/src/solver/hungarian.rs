//! Rectangular linear assignment (Kuhn–Munkres with potentials).

use std::cell::Cell;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::Matching;
use crate::scalar::Scalar;

thread_local! {
    static HUNGARIAN_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`hungarian`] invocations on this thread.
pub fn hungarian_calls() -> u64 {
    HUNGARIAN_CALLS.with(Cell::get)
}

/// Minimum-cost assignment of every row of `cost` (requires `rows <= cols`).
///
/// Returns the column of each row.
fn solve_min<T: Scalar>(cost: &Array2<T>) -> Vec<usize> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);
    if n == 0 {
        return Vec::new();
    }
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    // p[j]: 1-based row assigned to 1-based column j; 0 = free.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal cost of matching `min(|rows|, |cols|)` pairs inside the given sub-block.
fn best_cost<T: Scalar>(cost: &Array2<T>, rows: &[usize], cols: &[usize]) -> T {
    if rows.is_empty() || cols.is_empty() {
        return T::zero();
    }
    let transpose = rows.len() > cols.len();
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let sub = Array2::from_shape_fn((r.len(), c.len()), |(a, b)| {
        if transpose {
            cost[[c[b], r[a]]]
        } else {
            cost[[r[a], c[b]]]
        }
    });
    let assignment = solve_min(&sub);
    assignment
        .iter()
        .enumerate()
        .map(|(a, &b)| sub[[a, b]])
        .sum()
}

/// Optimal assignment of `min(n, m)` pairs.
///
/// Ties are broken towards the lexicographically smallest row-major
/// assignment, where leaving a row unassigned sorts after every column.
pub fn hungarian<T: Scalar>(scores: ArrayView2<'_, T>, maximize: bool) -> Result<Matching> {
    if let Some(((row, col), _)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "assignment scores",
            row,
            col,
        });
    }
    HUNGARIAN_CALLS.with(|c| c.set(c.get() + 1));
    let (n, m) = scores.dim();
    if n == 0 || m == 0 {
        return Ok(Matching::empty(n, m));
    }
    let cost = if maximize {
        scores.mapv(|v| -v)
    } else {
        scores.to_owned()
    };
    let all_rows: Vec<usize> = (0..n).collect();
    let mut free_cols: Vec<usize> = (0..m).collect();
    let optimum = best_cost(&cost, &all_rows, &free_cols);
    let magnitude = cost.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::tie_tolerance() * (T::one() + magnitude * T::lit(n.min(m) as f64));

    let mut fixed = T::zero();
    let mut assignment = vec![None; n];
    for i in 0..n {
        let rest = &all_rows[i + 1..];
        let needed = (n - i).min(free_cols.len());
        let mut chosen = false;
        if needed > 0 {
            for pos in 0..free_cols.len() {
                let col = free_cols[pos];
                let mut remaining = free_cols.clone();
                remaining.remove(pos);
                let value = fixed + cost[[i, col]] + best_cost(&cost, rest, &remaining);
                if value <= optimum + tol {
                    fixed += cost[[i, col]];
                    assignment[i] = Some(col);
                    free_cols = remaining;
                    chosen = true;
                    break;
                }
            }
        }
        // Leaving row i free is only feasible while more rows than columns remain.
        debug_assert!(chosen || rest.len() >= free_cols.len());
    }
    Matching::from_assignment(m, assignment)
}

/// Exhaustive search over every assignment of `min(n, m)` pairs.
///
/// Returns the best total and the first optimal assignment in the same
/// lexicographic order as [`hungarian`]. Exponential; for tests and small
/// sanity checks only.
pub fn exhaustive_assignment<T: Scalar>(scores: ArrayView2<'_, T>, maximize: bool) -> (T, Matching) {
    fn recurse<T: Scalar>(
        scores: &ArrayView2<'_, T>,
        maximize: bool,
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        total: T,
        best: &mut Option<(T, Vec<Option<usize>>)>,
    ) {
        let (n, m) = scores.dim();
        if row == n {
            let better = match best {
                None => true,
                Some((b, _)) => {
                    if maximize {
                        total > *b
                    } else {
                        total < *b
                    }
                }
            };
            if better {
                *best = Some((total, current.clone()));
            }
            return;
        }
        let free = used.iter().filter(|u| !**u).count();
        let assigned = current.iter().flatten().count();
        let target = n.min(m);
        for col in 0..m {
            if used[col] {
                continue;
            }
            used[col] = true;
            current[row] = Some(col);
            recurse(scores, maximize, row + 1, used, current, total + scores[[row, col]], best);
            current[row] = None;
            used[col] = false;
        }
        // Skip this row only if the remaining rows can still reach the target.
        if assigned + (n - row - 1).min(free) >= target {
            recurse(scores, maximize, row + 1, used, current, total, best);
        }
    }

    let (n, m) = scores.dim();
    let mut best = None;
    recurse(
        &scores,
        maximize,
        0,
        &mut vec![false; m],
        &mut vec![None; n],
        T::zero(),
        &mut best,
    );
    let (total, assignment) = best.unwrap_or((T::zero(), vec![None; n]));
    let matching = Matching::from_assignment(m, assignment).expect("enumeration yields a valid matching");
    (total, matching)
}
