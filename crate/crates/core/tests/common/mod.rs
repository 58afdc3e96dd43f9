//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the simplex code.
#![allow(dead_code)]

use symtree_core::basis::BasisSet;
use symtree_core::data::Dataset;
use symtree_core::learner::{candidate_thresholds, LearnConfig};
use symtree_core::lp::{LpProblem, Relation};

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Optimal objective of a bounded LP by enumerating every vertex; `None`
/// when no vertex is feasible.
pub fn lp_vertex_enum(p: &LpProblem) -> Option<f64> {
    let n = p.objective.len();
    // hyperplanes: (coeffs, rhs)
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut forced = Vec::new();
    for r in &p.rows {
        if r.relation == Relation::Eq {
            forced.push(planes.len());
        }
        planes.push((r.coeffs.clone(), r.rhs));
    }
    for j in 0..n {
        for bound in [p.lower[j], p.upper[j]] {
            if bound.is_finite() {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                planes.push((e, bound));
            }
        }
    }
    let free: Vec<usize> = (0..planes.len()).filter(|i| !forced.contains(i)).collect();
    if forced.len() > n {
        return None;
    }
    let mut best: Option<f64> = None;
    combinations(free.len(), n - forced.len(), &mut |sel| {
        let idx: Vec<usize> = forced.iter().copied().chain(sel.iter().map(|&s| free[s])).collect();
        let a = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_linear(a, b) {
            if p.max_violation(&x) <= 1e-9 {
                let v = p.objective_at(&x);
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
    });
    best
}

pub fn l1_objective(phi: &[Vec<f64>], y: &[f64], w: f64, lambda: f64, c: &[f64]) -> f64 {
    let r: f64 = phi
        .iter()
        .zip(y)
        .map(|(row, yi)| (yi - row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).abs())
        .sum();
    w * r + lambda * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Minimum of the L1 objective over the coefficient box, found by visiting
/// every vertex of the hyperplane arrangement `{phi_i c = y_i}`,
/// `{c_k = 0}`, `{c_k = bound}` in coefficient space.
pub fn l1_vertex_enum(phi: &[Vec<f64>], y: &[f64], w: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    let k = phi[0].len();
    let mut planes: Vec<(Vec<f64>, f64)> = phi.iter().cloned().zip(y.iter().copied()).collect();
    for j in 0..k {
        for v in [0.0, lo, hi] {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            planes.push((e, v));
        }
    }
    let mut best = f64::INFINITY;
    combinations(planes.len(), k, &mut |sel| {
        let a = sel.iter().map(|&i| planes[i].0.clone()).collect();
        let b = sel.iter().map(|&i| planes[i].1).collect();
        if let Some(c) = solve_linear(a, b) {
            if c.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12) {
                best = best.min(l1_objective(phi, y, w, lambda, &c));
            }
        }
    });
    best
}

/// [`l1_vertex_enum`] with `lo_y <= points_p c <= hi_y` for every row of
/// `points`; `None` when infeasible. Empty `phi` is allowed.
pub fn l1_bounded_vertex_enum(
    phi: &[Vec<f64>],
    y: &[f64],
    w: f64,
    lambda: f64,
    (lo, hi): (f64, f64),
    points: &[Vec<f64>],
    (lo_y, hi_y): (f64, f64),
) -> Option<f64> {
    let k = points[0].len();
    let mut planes: Vec<(Vec<f64>, f64)> = phi.iter().cloned().zip(y.iter().copied()).collect();
    for p in points {
        planes.push((p.clone(), lo_y));
        planes.push((p.clone(), hi_y));
    }
    for j in 0..k {
        for v in [0.0, lo, hi] {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            planes.push((e, v));
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut best: Option<f64> = None;
    combinations(planes.len(), k, &mut |sel| {
        let a = sel.iter().map(|&i| planes[i].0.clone()).collect();
        let b = sel.iter().map(|&i| planes[i].1).collect();
        if let Some(c) = solve_linear(a, b) {
            let in_box = c.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12);
            let in_range = points.iter().all(|p| {
                let v = dot(p, &c);
                v >= lo_y - 1e-9 && v <= hi_y + 1e-9
            });
            if in_box && in_range {
                let v = l1_objective(phi, y, w, lambda, &c);
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
    });
    best
}

/// Optimal objective over every depth-<=2 tree with a branching root and
/// midpoint thresholds, each leaf solved by vertex enumeration.
pub fn brute_force(data: &Dataset, basis: &BasisSet, cfg: &LearnConfig) -> f64 {
    let phi: Vec<Vec<f64>> = data.features().iter().map(|x| basis.evaluate(x).unwrap()).collect();
    let ybounds = cfg.y_bounds_for(data);
    let w = 1.0 / data.len() as f64;
    let leaf = |idx: &[usize]| -> f64 {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| phi[i].clone()).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| data.labels()[i]).collect();
        l1_bounded_vertex_enum(&rows, &ys, w, cfg.lambda_m, cfg.c_bounds, &phi, ybounds)
            .unwrap_or(f64::INFINITY)
    };
    let ts = candidate_thresholds(data, 0).unwrap();
    let split = |idx: &[usize], t: f64| -> (Vec<usize>, Vec<usize>) {
        idx.iter().partition(|&&i| data.features()[i][0] < t)
    };
    let subtree = |idx: &[usize]| -> f64 {
        let mut best = leaf(idx);
        if cfg.depth >= 2 {
            for &t in &ts {
                let (l, r) = split(idx, t);
                best = best.min(cfg.lambda_c + leaf(&l) + leaf(&r));
            }
        }
        best
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let x_min = data.column(0).into_iter().fold(f64::INFINITY, f64::min);
    ts.iter()
        .chain(std::iter::once(&x_min))
        .map(|&t| {
            let (l, r) = split(&all, t);
            cfg.lambda_c + subtree(&l) + subtree(&r)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random consistent tree: each threshold lies inside the interval its
/// ancestors leave open, so every leaf owns a nonempty slab of `(lo, hi)`.
/// The root always branches; deeper nodes branch with probability 1/2
/// (always when `full`).
pub fn random_tree(
    rng: &mut impl rand::Rng,
    depth: usize,
    basis: &BasisSet,
    coef: f64,
    (lo, hi): (f64, f64),
    full: bool,
) -> symtree_core::tree::TreeModel {
    use symtree_core::tree::{Bounds, TreeModel};
    let mut b = TreeModel::builder(depth, basis.clone(), Bounds::unbounded());
    let mut stack = vec![(1usize, 0usize, lo, hi)];
    while let Some((n, d, a, z)) = stack.pop() {
        if d < depth && (n == 1 || full || rng.random_bool(0.5)) {
            // keep a margin so every slab stays wide enough to hold samples
            let t = a + (z - a) * rng.random_range(0.3..0.7);
            b = b.branch(n, 0, t);
            stack.push((2 * n, d + 1, a, t));
            stack.push((2 * n + 1, d + 1, t, z));
        } else {
            let c = (0..basis.len())
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-coef..coef) })
                .collect();
            b = b.leaf(n, c);
        }
    }
    b.build()
}
