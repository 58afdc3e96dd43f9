//! Globally optimal symbolic-tree learning.
//!
//! The mixed-integer learning problem decomposes once the split thresholds
//! are restricted to midpoints between consecutive feature values: every
//! left/right partition a continuous threshold can realize is realized by
//! some midpoint, and given the partition the problem separates into one L1
//! regression per leaf. The learner therefore enumerates every admissible
//! topology and threshold assignment by dynamic programming over data
//! subsets, solving each distinct leaf subproblem once.
//!
//! Every leaf LP also bounds the leaf expression at *all* training points,
//! mirroring the `yhat[i,n]` bounds of the mixed-integer model, so both
//! formulations share one feasible set.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lp::{L1Problem, OutputBounds};
use crate::tree::{Bounds, TreeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub depth: usize,
    pub lambda_c: f64,
    pub lambda_m: f64,
    pub c_bounds: (f64, f64),
    /// `None` derives bounds from the labels, see [`LearnConfig::y_bounds_for`].
    pub y_bounds: Option<(f64, f64)>,
    #[serde(rename = "eps")]
    pub eps_routing: f64,
    #[serde(rename = "big_M")]
    pub big_m: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            depth: 2,
            lambda_c: 1e-2,
            lambda_m: 1e-2,
            c_bounds: (-100.0, 100.0),
            y_bounds: None,
            eps_routing: 1e-4,
            big_m: 1000.0,
        }
    }
}

impl LearnConfig {
    /// Output bounds used for `data`: the configured ones, or the label
    /// range widened by 10% on each side and extended to contain 0.
    pub fn y_bounds_for(&self, data: &Dataset) -> (f64, f64) {
        if let Some(b) = self.y_bounds {
            return b;
        }
        let (lo, hi) = data.label_range();
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        let margin = if hi > lo { 0.1 * (hi - lo) } else { 1.0 };
        (lo - margin, hi + margin)
    }

    /// Checks the configuration against `data`, returning the resolved
    /// output bounds.
    pub fn validate(&self, data: &Dataset) -> Result<(f64, f64)> {
        let (c_lb, c_ub) = self.c_bounds;
        if !(c_lb < c_ub) {
            return Err(Error::Config(format!("c bounds [{c_lb}, {c_ub}] are degenerate")));
        }
        let (y_lb, y_ub) = self.y_bounds_for(data);
        if !(y_lb < y_ub) {
            return Err(Error::Config(format!("y bounds [{y_lb}, {y_ub}] are degenerate")));
        }
        // branch nodes carry the zero expression, which must be admissible
        if y_lb > 0.0 || y_ub < 0.0 {
            return Err(Error::Config(format!("y bounds [{y_lb}, {y_ub}] must contain 0")));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_m >= 0.0) {
            return Err(Error::Config("lambda_c and lambda_m must be nonnegative".into()));
        }
        if !(self.eps_routing > 0.0) || !(self.big_m > 0.0) {
            return Err(Error::Config("eps_routing and big_m must be positive".into()));
        }
        if self.depth == 0 || self.depth > 4 {
            return Err(Error::Config(format!("depth {} outside 1..=4", self.depth)));
        }
        Ok((y_lb, y_ub))
    }
}

/// Terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Mean absolute training error.
    pub l_acc: f64,
    /// Number of branch nodes.
    pub l_c: f64,
    /// Sum of absolute leaf coefficients.
    pub l_m: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: TreeModel,
    pub objective: f64,
    pub breakdown: Breakdown,
    pub subproblems_solved: usize,
    pub wall_time: Duration,
}

/// Midpoints between consecutive distinct values of feature `f`.
pub fn candidate_thresholds(data: &Dataset, f: usize) -> Result<Vec<f64>> {
    if f >= data.n_features() {
        return Err(Error::Index(format!(
            "feature {f} but data has {} features",
            data.n_features()
        )));
    }
    let mut v = data.column(f);
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
}

/// `L_acc + lambda_c * L_c + lambda_m * L_m` of `model` on `data`.
pub fn objective_of(model: &TreeModel, data: &Dataset, cfg: &LearnConfig) -> Result<(f64, Breakdown)> {
    let mut abs_err = 0.0;
    for (x, &y) in data.features().iter().zip(data.labels()) {
        abs_err += (y - model.predict(x)?).abs();
    }
    let b = Breakdown {
        l_acc: abs_err / data.len() as f64,
        l_c: model.complexity() as f64,
        l_m: model.coefficient_l1(),
    };
    Ok((b.l_acc + cfg.lambda_c * b.l_c + cfg.lambda_m * b.l_m, b))
}

/// Sorted indices of the samples in a node.
type Subset = Vec<u32>;

#[derive(Debug, Clone)]
enum Plan {
    Leaf(Subset),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Plan>,
        right: Box<Plan>,
    },
}

#[derive(Debug, Clone)]
struct Candidate {
    cost: f64,
    branches: usize,
    /// Preorder `(feature, threshold)` sequence, for tie-breaking.
    rules: Vec<(usize, f64)>,
    plan: Plan,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let tol = 1e-12 * a.cost.abs().max(b.cost.abs()).max(1.0);
    if (a.cost - b.cost).abs() > tol {
        return a.cost < b.cost;
    }
    if a.branches != b.branches {
        return a.branches < b.branches;
    }
    for (ra, rb) in a.rules.iter().zip(&b.rules) {
        match ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)) {
            Ordering::Equal => continue,
            o => return o == Ordering::Less,
        }
    }
    false
}

struct Search<'a> {
    data: &'a Dataset,
    thresholds: Vec<Vec<f64>>,
    lambda_c: f64,
}

impl Search<'_> {
    /// Distinct nontrivial partitions of `subset`, each labeled with the
    /// smallest threshold that produces it.
    fn splits(&self, subset: &Subset) -> Vec<(usize, f64, Subset, Subset)> {
        let mut out = Vec::new();
        for (f, ts) in self.thresholds.iter().enumerate() {
            let mut seen = HashSet::new();
            for &t in ts {
                let (l, r): (Subset, Subset) = subset
                    .iter()
                    .partition(|&&i| self.data.features()[i as usize][f] < t);
                if l.is_empty() || r.is_empty() || !seen.insert(l.clone()) {
                    continue;
                }
                out.push((f, t, l, r));
            }
        }
        out
    }

    /// Root partitions: every nontrivial split plus the one sending all
    /// samples right. The forced root branch may be vacuous, and with
    /// lambda_m > 0 that can beat every real split since a split duplicates
    /// the leaf coefficients.
    fn root_splits(&self, subset: &Subset) -> Vec<(usize, f64, Subset, Subset)> {
        let mut s = self.splits(subset);
        let t = self
            .data
            .column(0)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        s.push((0, t, Vec::new(), subset.clone()));
        s
    }

    fn collect(
        &self,
        subset: &Subset,
        depth_left: usize,
        visited: &mut HashSet<(Subset, usize)>,
        leaves: &mut HashSet<Subset>,
    ) {
        if !visited.insert((subset.clone(), depth_left)) {
            return;
        }
        leaves.insert(subset.clone());
        if depth_left == 0 {
            return;
        }
        for (_, _, l, r) in self.splits(subset) {
            self.collect(&l, depth_left - 1, visited, leaves);
            self.collect(&r, depth_left - 1, visited, leaves);
        }
    }

    fn best(
        &self,
        subset: &Subset,
        depth_left: usize,
        leaf_cost: &HashMap<Subset, Option<f64>>,
        memo: &mut HashMap<(Subset, usize), Option<Candidate>>,
    ) -> Option<Candidate> {
        if let Some(c) = memo.get(&(subset.clone(), depth_left)) {
            return c.clone();
        }
        let mut best: Option<Candidate> = leaf_cost[subset].map(|cost| Candidate {
            cost,
            branches: 0,
            rules: Vec::new(),
            plan: Plan::Leaf(subset.clone()),
        });
        if depth_left > 0 {
            for (f, t, l, r) in self.splits(subset) {
                if let Some(c) = self.combine(f, t, &l, &r, depth_left - 1, leaf_cost, memo) {
                    if best.as_ref().is_none_or(|b| better(&c, b)) {
                        best = Some(c);
                    }
                }
            }
        }
        memo.insert((subset.clone(), depth_left), best.clone());
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn combine(
        &self,
        feature: usize,
        threshold: f64,
        left: &Subset,
        right: &Subset,
        depth_left: usize,
        leaf_cost: &HashMap<Subset, Option<f64>>,
        memo: &mut HashMap<(Subset, usize), Option<Candidate>>,
    ) -> Option<Candidate> {
        let l = self.best(left, depth_left, leaf_cost, memo)?;
        let r = self.best(right, depth_left, leaf_cost, memo)?;
        let mut rules = vec![(feature, threshold)];
        rules.extend_from_slice(&l.rules);
        rules.extend_from_slice(&r.rules);
        Some(Candidate {
            cost: self.lambda_c + l.cost + r.cost,
            branches: 1 + l.branches + r.branches,
            rules,
            plan: Plan::Split {
                feature,
                threshold,
                left: Box::new(l.plan),
                right: Box::new(r.plan),
            },
        })
    }
}

/// Learns the minimum-objective symbolic tree of depth at most `cfg.depth`
/// with the root forced to branch.
pub fn fit_tree(data: &Dataset, basis: &BasisSet, cfg: &LearnConfig) -> Result<FitReport> {
    let start = Instant::now();
    let (y_lb, y_ub) = cfg.validate(data)?;
    if basis.is_empty() {
        return Err(Error::Config("empty basis set".into()));
    }
    if basis.min_input_dim() > data.n_features() {
        return Err(Error::Dimension(format!(
            "basis reads coordinate {} but data has {} features",
            basis.min_input_dim() - 1,
            data.n_features()
        )));
    }
    let phi = data
        .features()
        .iter()
        .map(|x| basis.evaluate(x))
        .collect::<Result<Vec<_>>>()?;
    let weight = 1.0 / data.len() as f64;

    let search = Search {
        data,
        thresholds: (0..data.n_features())
            .map(|f| candidate_thresholds(data, f))
            .collect::<Result<_>>()?,
        lambda_c: cfg.lambda_c,
    };
    let all: Subset = (0..data.len() as u32).collect();
    let roots = search.root_splits(&all);

    let mut visited = HashSet::new();
    let mut leaf_sets = HashSet::new();
    for (_, _, l, r) in &roots {
        search.collect(l, cfg.depth - 1, &mut visited, &mut leaf_sets);
        search.collect(r, cfg.depth - 1, &mut visited, &mut leaf_sets);
    }
    let mut leaf_sets: Vec<Subset> = leaf_sets.into_iter().collect();
    leaf_sets.sort();

    let output = OutputBounds {
        points: &phi,
        lo: y_lb,
        hi: y_ub,
    };
    let fits: Vec<(Subset, Option<Vec<f64>>, Option<f64>)> = leaf_sets
        .into_par_iter()
        .map(|s| {
            let rows: Vec<Vec<f64>> = s.iter().map(|&i| phi[i as usize].clone()).collect();
            let ys: Vec<f64> = s.iter().map(|&i| data.labels()[i as usize]).collect();
            let problem = L1Problem::new(&rows, &ys, weight, cfg.lambda_m, cfg.c_bounds)
                .with_output_bounds(output);
            match problem.solve() {
                Ok(fit) => Ok((s, Some(fit.coeffs), Some(fit.loss))),
                Err(Error::Infeasible(_)) => Ok((s, None, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let subproblems_solved = fits.len();
    let mut leaf_cost = HashMap::with_capacity(fits.len());
    let mut leaf_coeffs = HashMap::with_capacity(fits.len());
    for (s, c, loss) in fits {
        leaf_cost.insert(s.clone(), loss);
        leaf_coeffs.insert(s, c);
    }

    let mut memo = HashMap::new();
    let mut best: Option<Candidate> = None;
    for (f, t, l, r) in &roots {
        if let Some(c) = search.combine(*f, *t, l, r, cfg.depth - 1, &leaf_cost, &mut memo) {
            if best.as_ref().is_none_or(|b| better(&c, b)) {
                best = Some(c);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::Infeasible("no tree satisfies the output bounds at every training point".into())
    })?;

    let bounds = Bounds {
        c_lb: cfg.c_bounds.0,
        c_ub: cfg.c_bounds.1,
        y_lb,
        y_ub,
    };
    let mut builder = TreeModel::builder(cfg.depth, basis.clone(), bounds);
    let mut stack = vec![(1usize, &best.plan)];
    while let Some((n, plan)) = stack.pop() {
        match plan {
            Plan::Leaf(s) => {
                let coeffs = leaf_coeffs[s].clone().expect("chosen leaves are feasible");
                builder = builder.leaf(n, coeffs);
            }
            Plan::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                builder = builder.branch(n, *feature, *threshold);
                stack.push((2 * n, left));
                stack.push((2 * n + 1, right));
            }
        }
    }
    let model = builder.build();
    model.ensure_valid()?;
    let (objective, breakdown) = objective_of(&model, data, cfg)?;
    debug_assert!(
        (objective - best.cost).abs() <= 1e-7 * objective.abs().max(1.0),
        "search cost {} vs rescored {objective}",
        best.cost
    );
    Ok(FitReport {
        model,
        objective,
        breakdown,
        subproblems_solved,
        wall_time: start.elapsed(),
    })
}
