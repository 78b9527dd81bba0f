//! Independent oracles for tests. Compiled only for tests or with the
//! `testing` feature.

use crate::model::{ParamVector, Scorer};
use crate::num::Scalar;

/// Minimum of `Σ γ_ij C_ij` over every vertex of the transportation polytope.
///
/// Enumerates all `(m+n-1)`-subsets of cells, keeps those forming a spanning
/// tree of the row/column bipartite graph, solves the marginal equations by
/// Gaussian elimination and keeps nonnegative solutions. Exponential; meant
/// for `m, n ≤ 4`.
pub fn brute_force_transport(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells = m * n;
    let size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(size);
    enumerate(0, cells, size, &mut chosen, &mut |subset| {
        if !is_spanning_tree(subset, m, n) {
            return;
        }
        if let Some(flows) = solve_flows(subset, a, b, n) {
            if flows.iter().all(|&f| f >= -1e-12) {
                let c: f64 = subset.iter().zip(&flows).map(|(&k, &f)| f * cost[k]).sum();
                best = best.min(c);
            }
        }
    });
    best
}

fn enumerate(start: usize, total: usize, size: usize, chosen: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if chosen.len() == size {
        visit(chosen);
        return;
    }
    let need = size - chosen.len();
    for k in start..=total - need {
        chosen.push(k);
        enumerate(k + 1, total, size, chosen, visit);
        chosen.pop();
    }
}

fn is_spanning_tree(subset: &[usize], m: usize, n: usize) -> bool {
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &k in subset {
        let (r, c) = (k / n, m + k % n);
        let (x, y) = (find(&mut parent, r), find(&mut parent, c));
        if x == y {
            return false;
        }
        parent[x] = y;
    }
    true
}

/// Solves the `(m+n) × (m+n-1)` marginal system restricted to `subset`.
fn solve_flows(subset: &[usize], a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = a.len();
    let vars = subset.len();
    let eqs = m + n;
    let mut mat = vec![vec![0.0; vars + 1]; eqs];
    for (v, &k) in subset.iter().enumerate() {
        mat[k / n][v] = 1.0;
        mat[m + k % n][v] = 1.0;
    }
    for i in 0..m {
        mat[i][vars] = a[i];
    }
    for j in 0..n {
        mat[m + j][vars] = b[j];
    }
    let mut row = 0;
    let mut pivots = Vec::new();
    for col in 0..vars {
        let p = (row..eqs).max_by(|&x, &y| mat[x][col].abs().total_cmp(&mat[y][col].abs()))?;
        if mat[p][col].abs() < 1e-12 {
            return None;
        }
        mat.swap(row, p);
        let pv = mat[row][col];
        for c in col..=vars {
            mat[row][c] /= pv;
        }
        for r in 0..eqs {
            if r != row && mat[r][col] != 0.0 {
                let f = mat[r][col];
                for c in col..=vars {
                    mat[r][c] -= f * mat[row][c];
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    // Leftover equation must be consistent.
    for r in row..eqs {
        if mat[r][vars].abs() > 1e-9 {
            return None;
        }
    }
    Some((0..vars).map(|v| mat[v][vars]).collect())
}

/// Central finite differences of `loss` with respect to each parameter of `model`.
pub fn finite_difference_grad<T, M, F>(model: &M, step: T, mut loss: F) -> ParamVector<T>
where
    T: Scalar,
    M: Scorer<T> + Clone,
    F: FnMut(&M) -> T,
{
    let base = model.params();
    let mut out = vec![T::zero(); base.len()];
    let mut probe = model.clone();
    for i in model.trainable_range() {
        let mut p = base.clone();
        p.as_mut_slice()[i] += step;
        probe.set_params(&p).expect("same layout");
        let up = loss(&probe);
        p.as_mut_slice()[i] -= step + step;
        probe.set_params(&p).expect("same layout");
        let down = loss(&probe);
        out[i] = (up - down) / (step + step);
    }
    ParamVector::new(out)
}

/// Largest `|a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_known_instance() {
        // 0→1 and 2→3 on a line, uniform halves: optimum 1.
        let cost = [1.0, 3.0, 1.0, 1.0];
        let v = brute_force_transport(&[0.5, 0.5], &[0.5, 0.5], &cost);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_single_cell() {
        assert_eq!(brute_force_transport(&[1.0], &[1.0], &[2.5]), 2.5);
    }
}
