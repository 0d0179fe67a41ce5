//! Reference implementations written independently of the library.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use universe_match::Matching;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_partial_matching<R: Rng>(rng: &mut R, rows: usize, cols: usize, density: f64) -> Matching {
    let mut free: Vec<usize> = (0..cols).collect();
    let mut assignment = vec![None; rows];
    for slot in assignment.iter_mut() {
        if !free.is_empty() && rng.random_bool(density) {
            let pick = rng.random_range(0..free.len());
            *slot = Some(free.remove(pick));
        }
    }
    Matching::from_assignment(cols, assignment).unwrap()
}

pub fn softmax_rows(raw: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Σ_ij BCE(p_ij, x_ij) over one pair, probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_oracle(
    raw_a: &Array2<f64>,
    raw_b: &Array2<f64>,
    gt: &Matching,
    tau: f64,
    outlier_aware: bool,
    eps: f64,
) -> f64 {
    let pa = softmax_rows(raw_a, tau);
    let pb = softmax_rows(raw_b, tau);
    let n_u = pa.ncols();
    let upto = if outlier_aware { n_u - 1 } else { n_u };
    let mut loss = 0.0;
    for i in 0..pa.nrows() {
        for j in 0..pb.nrows() {
            let mut p = 0.0;
            for k in 0..upto {
                p += pa[[i, k]] * pb[[j, k]];
            }
            let p = p.clamp(eps, 1.0 - eps);
            loss -= if gt.contains(i, j) { p.ln() } else { (1.0 - p).ln() };
        }
    }
    loss
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn central_diff(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut plus = x.clone();
        plus[idx] += h;
        let mut minus = x.clone();
        minus[idx] -= h;
        grad[idx] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// Gradient comparison with absolute comparison below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Best total over all injections of the smaller side into the larger, by recursion.
pub fn brute_force_best(s: &Array2<f64>, maximize: bool) -> f64 {
    let (n, m) = s.dim();
    if n > m {
        return brute_force_best(&s.t().to_owned(), maximize);
    }
    fn go(s: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, maximize: bool, best: &mut f64) {
        if row == s.nrows() {
            if (maximize && acc > *best) || (!maximize && acc < *best) {
                *best = acc;
            }
            return;
        }
        for c in 0..s.ncols() {
            if !used[c] {
                used[c] = true;
                go(s, row + 1, used, acc + s[[row, c]], maximize, best);
                used[c] = false;
            }
        }
    }
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    go(s, 0, &mut vec![false; m], 0.0, maximize, &mut best);
    if n == 0 {
        0.0
    } else {
        best
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for v in 0..n {
            if !prefix.contains(&v) {
                prefix.push(v);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}

pub fn dense(m: &Matching) -> Array2<f64> {
    let mut d = Array2::zeros(m.shape());
    for (i, j) in m.pairs() {
        d[[i, j]] = 1.0;
    }
    d
}
