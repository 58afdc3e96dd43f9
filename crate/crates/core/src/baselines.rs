//! Comparison models: sparse L1 regression over the full basis, and greedy
//! CART trees with constant or linear leaves.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::Result;
use crate::learner::candidate_thresholds;
use crate::lp::fit_l1;
use crate::tree::{Bounds, TreeModel};

#[derive(Debug, Clone)]
pub struct SparseFit {
    /// Depth-0 tree holding the single expression.
    pub model: TreeModel,
    /// `(1/N) sum |residual| + lambda_m sum |c|` at the optimum.
    pub loss: f64,
}

/// Globally optimal L1 regression of the labels on `basis`.
pub fn fit_sparse(data: &Dataset, basis: &BasisSet, lambda_m: f64, c_bounds: (f64, f64)) -> Result<SparseFit> {
    let phi = data
        .features()
        .iter()
        .map(|x| basis.evaluate(x))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_l1(&phi, data.labels(), 1.0 / data.len() as f64, lambda_m, c_bounds)?;
    let bounds = Bounds {
        c_lb: c_bounds.0,
        c_ub: c_bounds.1,
        ..Bounds::unbounded()
    };
    Ok(SparseFit {
        model: TreeModel::single_leaf(basis.clone(), fit.coeffs, bounds),
        loss: fit.loss,
    })
}

/// Leaf model used by the greedy trees.
trait LeafFit {
    fn basis(&self, n_features: usize) -> BasisSet;
    /// Coefficients and SSE for the samples `idx`.
    fn fit(&self, data: &Dataset, idx: &[usize]) -> (Vec<f64>, f64);
}

struct Constant;

impl LeafFit for Constant {
    fn basis(&self, _: usize) -> BasisSet {
        BasisSet::constant()
    }

    fn fit(&self, data: &Dataset, idx: &[usize]) -> (Vec<f64>, f64) {
        if idx.is_empty() {
            return (vec![0.0], 0.0);
        }
        let y = data.labels();
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        let sse = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
        (vec![mean], sse)
    }
}

struct Linear;

impl LeafFit for Linear {
    fn basis(&self, n_features: usize) -> BasisSet {
        BasisSet::affine(n_features)
    }

    fn fit(&self, data: &Dataset, idx: &[usize]) -> (Vec<f64>, f64) {
        let nf = data.n_features();
        let (mean, sse) = Constant.fit(data, idx);
        let mut constant = vec![0.0; nf + 1];
        constant[0] = mean[0];
        if idx.len() < 2 {
            return (constant, sse);
        }
        let a = DMatrix::from_fn(idx.len(), nf + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                data.features()[idx[r]][c - 1]
            }
        });
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| data.labels()[i]));
        // minimum-norm least squares; rank-deficient columns get zero weight
        let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-12) else {
            return (constant, sse);
        };
        let resid = &a * &sol - &b;
        let lin_sse = resid.norm_squared();
        if lin_sse <= sse {
            (sol.iter().copied().collect(), lin_sse)
        } else {
            (constant, sse)
        }
    }
}

enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn grow(data: &Dataset, idx: &[usize], depth_left: usize, leaf: &dyn LeafFit) -> Node {
    let (coeffs, sse) = leaf.fit(data, idx);
    if depth_left == 0 || idx.len() < 2 {
        return Node::Leaf(coeffs);
    }
    let sub = Dataset::new(
        idx.iter().map(|&i| data.features()[i].clone()).collect(),
        idx.iter().map(|&i| data.labels()[i]).collect(),
    )
    .expect("subset of a valid dataset");
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..data.n_features() {
        for t in candidate_thresholds(&sub, f).expect("feature in range") {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.features()[i][f] < t);
            let total = leaf.fit(data, &l).1 + leaf.fit(data, &r).1;
            if best.is_none_or(|(b, _, _)| total < b) {
                best = Some((total, f, t));
            }
        }
    }
    match best {
        // a split must strictly reduce the training SSE
        Some((total, feature, threshold)) if total < sse - 1e-12 * sse.max(1.0) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| data.features()[i][feature] < threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(data, &l, depth_left - 1, leaf)),
                right: Box::new(grow(data, &r, depth_left - 1, leaf)),
            }
        }
        _ => Node::Leaf(coeffs),
    }
}

fn greedy_tree(data: &Dataset, depth: usize, leaf: &dyn LeafFit) -> TreeModel {
    let all: Vec<usize> = (0..data.len()).collect();
    let root = grow(data, &all, depth, leaf);
    let basis = leaf.basis(data.n_features());
    let root = match root {
        Node::Leaf(c) => return TreeModel::single_leaf(basis, c, Bounds::unbounded()),
        split => split,
    };
    let mut b = TreeModel::builder(depth, basis, Bounds::unbounded());
    let mut stack = vec![(1usize, root)];
    while let Some((n, node)) = stack.pop() {
        match node {
            Node::Leaf(c) => b = b.leaf(n, c),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                b = b.branch(n, feature, threshold);
                stack.push((2 * n, *left));
                stack.push((2 * n + 1, *right));
            }
        }
    }
    b.build()
}

/// Greedy SSE tree with mean-valued leaves. A root without a useful split
/// gives a depth-0 model.
pub fn fit_cart_constant(data: &Dataset, depth: usize) -> TreeModel {
    greedy_tree(data, depth, &Constant)
}

/// Greedy SSE tree with least-squares affine leaves over the features.
pub fn fit_cart_linear(data: &Dataset, depth: usize) -> TreeModel {
    greedy_tree(data, depth, &Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::canonical_basis;

    #[test]
    fn cart_step() {
        let d = Dataset::from_1d(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 5.0, 5.0]).unwrap();
        let m = fit_cart_constant(&d, 1);
        assert_eq!(m.rules[&1].threshold, 1.5);
        assert_eq!(m.leaves[&2].coeffs, vec![0.0]);
        assert_eq!(m.leaves[&3].coeffs, vec![5.0]);
    }

    #[test]
    fn cart_constant_data_has_no_split() {
        let d = Dataset::from_1d(&[0.0, 1.0, 2.0], &[4.0; 3]).unwrap();
        let m = fit_cart_constant(&d, 2);
        assert_eq!(m.depth(), 0);
        assert_eq!(m.predict(&[7.0]).unwrap(), 4.0);
        assert!(m.is_valid());
    }

    #[test]
    fn linear_tree_piecewise() {
        let xs = [0.0, 0.5, 1.5, 2.0];
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 1.0 { x } else { 2.0 * x - 1.0 }).collect();
        let d = Dataset::from_1d(&xs, &ys).unwrap();
        let m = fit_cart_linear(&d, 1);
        let t = m.rules[&1].threshold;
        assert!(t > 0.5 && t < 1.5);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(&[*x]).unwrap() - y).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_tree_on_a_line_does_not_split() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let m = fit_cart_linear(&Dataset::from_1d(&xs, &ys).unwrap(), 2);
        assert_eq!(m.complexity(), 0);
        assert!((m.predict(&[10.0]).unwrap() - 28.0).abs() < 1e-9);
    }

    #[test]
    fn sparse_recovers_in_class_law() {
        let xs: Vec<f64> = (0..12).map(|i| 0.1 + 0.07 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-x).exp()).collect();
        let d = Dataset::from_1d(&xs, &ys).unwrap();
        let f = fit_sparse(&d, &canonical_basis(), 0.0, (-100.0, 100.0)).unwrap();
        assert!(f.loss < 1e-9, "{}", f.loss);
        let f = fit_sparse(&d, &canonical_basis(), 1e6, (-100.0, 100.0)).unwrap();
        assert!(f.model.leaves[&1].coeffs.iter().all(|&c| c == 0.0));
    }
}
