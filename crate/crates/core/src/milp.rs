//! The mixed-integer learning problem as an explicit artifact.
//!
//! [`build_milp`] materializes every constraint family of the tree-learning
//! MILP for a dataset, [`write_mps`] exports it in fixed-format MPS with a
//! JSON name map, and [`read_solution`] decodes an external solver's
//! assignment back into a [`TreeModel`], re-scoring it independently of the
//! solver's claimed objective.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{objective_of, Breakdown, LearnConfig};
use crate::lp::{solve_lp, L1Problem, LpProblem, LpStatus, OutputBounds, Relation};
use crate::tree::{ancestors, node_count, Bounds, NodeKind, Side, TreeModel};

/// Tolerance for treating a solver value as binary.
pub const INTEGRALITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

/// Constraint family, in export order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Tree structure: children branch only under branching parents.
    Structure,
    /// No samples at branching nodes.
    BranchEmpty,
    /// Each sample lands in exactly one node.
    Assign,
    /// Samples only at nodes whose ancestors all branch.
    Ancestor,
    /// One feature per branching node.
    Feature,
    /// Big-M routing along the path to each node.
    Routing,
    /// Node expression value at each sample.
    Expression,
    /// Zero coefficients at branching nodes.
    CoeffGate,
    /// Linearized product of assignment and expression, and its sum.
    Linearization,
    /// Absolute-value splits of residuals and coefficients.
    Absolute,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Structure,
        Family::BranchEmpty,
        Family::Assign,
        Family::Ancestor,
        Family::Feature,
        Family::Routing,
        Family::Expression,
        Family::CoeffGate,
        Family::Linearization,
        Family::Absolute,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Structure => "structure",
            Family::BranchEmpty => "branch-empty",
            Family::Assign => "assign",
            Family::Ancestor => "ancestor",
            Family::Feature => "feature",
            Family::Routing => "routing",
            Family::Expression => "expression",
            Family::CoeffGate => "coeff-gate",
            Family::Linearization => "linearization",
            Family::Absolute => "absolute",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpRow {
    pub name: String,
    pub family: Family,
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl MilpRow {
    fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let v = self.activity(x) - self.rhs;
        match self.relation {
            Relation::Le => v.max(0.0),
            Relation::Ge => (-v).max(0.0),
            Relation::Eq => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_vars: usize,
    pub n_binary: usize,
    pub n_rows: usize,
}

/// Column offsets of each variable family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_data: usize,
    pub n_features: usize,
    pub n_basis: usize,
    pub n_nodes: usize,
    pub n_internal: usize,
    d: usize,
    z: usize,
    a: usize,
    b: usize,
    c: usize,
    yhat: usize,
    delta: usize,
    ypred: usize,
    eps_pos: usize,
    eps_neg: usize,
    cpos: usize,
    cneg: usize,
    end: usize,
}

// Sample, feature and basis indices are 0-based; nodes are 1-based.
impl Layout {
    fn new(n_data: usize, n_features: usize, n_basis: usize, depth: usize) -> Self {
        let n_nodes = node_count(depth);
        let n_internal = node_count(depth - 1);
        let d = 0;
        let z = d + n_nodes;
        let a = z + n_data * n_nodes;
        let b = a + n_features * n_internal;
        let c = b + n_internal;
        let yhat = c + n_basis * n_nodes;
        let delta = yhat + n_data * n_nodes;
        let ypred = delta + n_data * n_nodes;
        let eps_pos = ypred + n_data;
        let eps_neg = eps_pos + n_data;
        let cpos = eps_neg + n_data;
        let cneg = cpos + n_basis * n_nodes;
        let end = cneg + n_basis * n_nodes;
        Layout {
            n_data,
            n_features,
            n_basis,
            n_nodes,
            n_internal,
            d,
            z,
            a,
            b,
            c,
            yhat,
            delta,
            ypred,
            eps_pos,
            eps_neg,
            cpos,
            cneg,
            end,
        }
    }

    pub fn d(&self, n: usize) -> usize {
        self.d + n - 1
    }
    pub fn z(&self, i: usize, n: usize) -> usize {
        self.z + i * self.n_nodes + n - 1
    }
    pub fn a(&self, f: usize, n: usize) -> usize {
        self.a + f * self.n_internal + n - 1
    }
    pub fn b(&self, n: usize) -> usize {
        self.b + n - 1
    }
    pub fn c(&self, k: usize, n: usize) -> usize {
        self.c + k * self.n_nodes + n - 1
    }
    pub fn yhat(&self, i: usize, n: usize) -> usize {
        self.yhat + i * self.n_nodes + n - 1
    }
    pub fn delta(&self, i: usize, n: usize) -> usize {
        self.delta + i * self.n_nodes + n - 1
    }
    pub fn ypred(&self, i: usize) -> usize {
        self.ypred + i
    }
    pub fn eps_pos(&self, i: usize) -> usize {
        self.eps_pos + i
    }
    pub fn eps_neg(&self, i: usize) -> usize {
        self.eps_neg + i
    }
    pub fn cpos(&self, k: usize, n: usize) -> usize {
        self.cpos + k * self.n_nodes + n - 1
    }
    pub fn cneg(&self, k: usize, n: usize) -> usize {
        self.cneg + k * self.n_nodes + n - 1
    }
    pub fn n_vars(&self) -> usize {
        self.end
    }
}

/// The complete MILP for one dataset, basis and configuration.
#[derive(Debug, Clone)]
pub struct MilpArtifact {
    pub variables: Vec<Variable>,
    pub rows: Vec<MilpRow>,
    pub objective: Vec<(usize, f64)>,
    pub layout: Layout,
    pub data: Dataset,
    pub basis: BasisSet,
    pub cfg: LearnConfig,
    pub y_bounds: (f64, f64),
    by_name: HashMap<String, usize>,
}

/// Builds the MILP. Fails with `Error::Config` when the big-M constant
/// cannot dominate the routed feature gaps or the output range.
pub fn build_milp(data: &Dataset, basis: &BasisSet, cfg: &LearnConfig) -> Result<MilpArtifact> {
    let (y_lb, y_ub) = cfg.validate(data)?;
    let (c_lb, c_ub) = cfg.c_bounds;
    if !c_lb.is_finite() || !c_ub.is_finite() {
        return Err(Error::Config("the MILP needs finite coefficient bounds".into()));
    }
    if basis.is_empty() {
        return Err(Error::Config("empty basis set".into()));
    }
    let x_min = data.features().iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    let x_max = data.features().iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let m = cfg.big_m;
    let eps = cfg.eps_routing;
    let need_route = x_max - x_min + 1.0 + eps;
    let need_out = y_lb.abs().max(y_ub.abs());
    if m < need_route || m < need_out {
        return Err(Error::Config(format!(
            "big-M {m} below required {}",
            need_route.max(need_out)
        )));
    }
    let phi = data
        .features()
        .iter()
        .map(|x| basis.evaluate(x))
        .collect::<Result<Vec<_>>>()?;

    let (nd, nf, nk) = (data.len(), data.n_features(), basis.len());
    let lay = Layout::new(nd, nf, nk, cfg.depth);
    let (nn, nint) = (lay.n_nodes, lay.n_internal);

    let mut variables = Vec::with_capacity(lay.n_vars());
    let mut var = |name: String, kind, lower, upper| {
        variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        })
    };
    use VarKind::{Binary, Continuous};
    let inf = f64::INFINITY;
    for n in 1..=nn {
        var(format!("d[{n}]"), Binary, 0.0, 1.0);
    }
    for i in 1..=nd {
        for n in 1..=nn {
            var(format!("z[{i},{n}]"), Binary, 0.0, 1.0);
        }
    }
    for f in 1..=nf {
        for n in 1..=nint {
            var(format!("a[{f},{n}]"), Binary, 0.0, 1.0);
        }
    }
    for n in 1..=nint {
        var(format!("b[{n}]"), Continuous, x_min - 1.0, x_max + 1.0);
    }
    for k in 1..=nk {
        for n in 1..=nn {
            var(format!("c[{k},{n}]"), Continuous, c_lb, c_ub);
        }
    }
    for fam in ["yhat", "delta"] {
        for i in 1..=nd {
            for n in 1..=nn {
                var(format!("{fam}[{i},{n}]"), Continuous, y_lb, y_ub);
            }
        }
    }
    for i in 1..=nd {
        var(format!("ypred[{i}]"), Continuous, y_lb, y_ub);
    }
    for fam in ["eps_pos", "eps_neg"] {
        for i in 1..=nd {
            var(format!("{fam}[{i}]"), Continuous, 0.0, inf);
        }
    }
    for fam in ["cpos", "cneg"] {
        for k in 1..=nk {
            for n in 1..=nn {
                var(format!("{fam}[{k},{n}]"), Continuous, 0.0, inf);
            }
        }
    }
    debug_assert_eq!(variables.len(), lay.n_vars());

    let mut rows = Vec::new();
    let mut row = |name: String, family, terms: Vec<(usize, f64)>, relation, rhs| {
        rows.push(MilpRow {
            name,
            family,
            terms,
            relation,
            rhs,
        })
    };
    use Relation::{Eq, Ge, Le};

    for n in 1..=nint {
        row(format!("struct_l[{n}]"), Family::Structure, vec![(lay.d(2 * n), 1.0), (lay.d(n), -1.0)], Le, 0.0);
        row(format!("struct_r[{n}]"), Family::Structure, vec![(lay.d(2 * n + 1), 1.0), (lay.d(n), -1.0)], Le, 0.0);
    }
    row("root".into(), Family::Structure, vec![(lay.d(1), 1.0)], Eq, 1.0);
    for n in nint + 1..=nn {
        row(format!("terminal[{n}]"), Family::Structure, vec![(lay.d(n), 1.0)], Eq, 0.0);
    }

    for i in 0..nd {
        for n in 1..=nn {
            row(
                format!("branch_empty[{},{n}]", i + 1),
                Family::BranchEmpty,
                vec![(lay.z(i, n), 1.0), (lay.d(n), 1.0)],
                Le,
                1.0,
            );
        }
    }

    for i in 0..nd {
        let terms = (1..=nn).map(|n| (lay.z(i, n), 1.0)).collect();
        row(format!("assign[{}]", i + 1), Family::Assign, terms, Eq, 1.0);
    }

    for i in 0..nd {
        for n in 1..=nn {
            for (m, _) in ancestors(n) {
                row(
                    format!("ancestor[{},{n},{m}]", i + 1),
                    Family::Ancestor,
                    vec![(lay.z(i, n), 1.0), (lay.d(m), -1.0)],
                    Le,
                    0.0,
                );
            }
        }
    }

    for n in 1..=nint {
        let mut terms: Vec<(usize, f64)> = (0..nf).map(|f| (lay.a(f, n), 1.0)).collect();
        terms.push((lay.d(n), -1.0));
        row(format!("feature[{n}]"), Family::Feature, terms, Eq, 0.0);
    }

    for (i, x) in data.features().iter().enumerate() {
        for n in 1..=nn {
            for (anc, side) in ancestors(n) {
                let mut terms: Vec<(usize, f64)> = (0..nf)
                    .filter(|&f| x[f] != 0.0)
                    .map(|f| (lay.a(f, anc), x[f]))
                    .collect();
                terms.push((lay.b(anc), -1.0));
                match side {
                    Side::Left => {
                        terms.push((lay.z(i, n), m));
                        row(format!("route_l[{},{n},{anc}]", i + 1), Family::Routing, terms, Le, m - eps);
                    }
                    Side::Right => {
                        terms.push((lay.z(i, n), -m));
                        row(format!("route_r[{},{n},{anc}]", i + 1), Family::Routing, terms, Ge, -m);
                    }
                }
            }
        }
    }

    for (i, p) in phi.iter().enumerate() {
        for n in 1..=nn {
            let mut terms = vec![(lay.yhat(i, n), 1.0)];
            terms.extend((0..nk).filter(|&k| p[k] != 0.0).map(|k| (lay.c(k, n), -p[k])));
            row(format!("expr[{},{n}]", i + 1), Family::Expression, terms, Eq, 0.0);
        }
    }

    for k in 0..nk {
        for n in 1..=nn {
            let (kk, c) = (k + 1, lay.c(k, n));
            row(format!("c_ub[{kk},{n}]"), Family::CoeffGate, vec![(c, 1.0), (lay.d(n), c_ub)], Le, c_ub);
            row(format!("c_lb[{kk},{n}]"), Family::CoeffGate, vec![(c, 1.0), (lay.d(n), c_lb)], Ge, c_lb);
        }
    }

    for i in 0..nd {
        for n in 1..=nn {
            let (ii, dl, z, yh) = (i + 1, lay.delta(i, n), lay.z(i, n), lay.yhat(i, n));
            row(format!("lin_ub[{ii},{n}]"), Family::Linearization, vec![(dl, 1.0), (z, -y_ub)], Le, 0.0);
            row(format!("lin_lb[{ii},{n}]"), Family::Linearization, vec![(dl, 1.0), (z, -y_lb)], Ge, 0.0);
            row(format!("lin_hi[{ii},{n}]"), Family::Linearization, vec![(dl, 1.0), (yh, -1.0), (z, m)], Le, m);
            row(format!("lin_lo[{ii},{n}]"), Family::Linearization, vec![(dl, 1.0), (yh, -1.0), (z, -m)], Ge, -m);
        }
    }
    for i in 0..nd {
        let mut terms = vec![(lay.ypred(i), 1.0)];
        terms.extend((1..=nn).map(|n| (lay.delta(i, n), -1.0)));
        row(format!("pred[{}]", i + 1), Family::Linearization, terms, Eq, 0.0);
    }

    for (i, &y) in data.labels().iter().enumerate() {
        row(
            format!("err[{}]", i + 1),
            Family::Absolute,
            vec![(lay.eps_pos(i), 1.0), (lay.eps_neg(i), -1.0), (lay.ypred(i), 1.0)],
            Eq,
            y,
        );
    }
    for k in 0..nk {
        for n in 1..=nn {
            row(
                format!("c_abs[{},{n}]", k + 1),
                Family::Absolute,
                vec![(lay.cpos(k, n), 1.0), (lay.cneg(k, n), -1.0), (lay.c(k, n), -1.0)],
                Eq,
                0.0,
            );
        }
    }

    let mut objective = Vec::new();
    let w = 1.0 / nd as f64;
    for i in 0..nd {
        objective.push((lay.eps_pos(i), w));
    }
    for i in 0..nd {
        objective.push((lay.eps_neg(i), w));
    }
    if cfg.lambda_c != 0.0 {
        objective.extend((1..=nn).map(|n| (lay.d(n), cfg.lambda_c)));
    }
    if cfg.lambda_m != 0.0 {
        for k in 0..nk {
            for n in 1..=nn {
                objective.push((lay.cpos(k, n), cfg.lambda_m));
                objective.push((lay.cneg(k, n), cfg.lambda_m));
            }
        }
    }
    objective.sort_by_key(|&(j, _)| j);

    let by_name = variables.iter().enumerate().map(|(j, v)| (v.name.clone(), j)).collect();
    Ok(MilpArtifact {
        variables,
        rows,
        objective,
        layout: lay,
        data: data.clone(),
        basis: basis.clone(),
        cfg: cfg.clone(),
        y_bounds: (y_lb, y_ub),
        by_name,
    })
}

impl MilpArtifact {
    pub fn counts(&self) -> Counts {
        Counts {
            n_vars: self.variables.len(),
            n_binary: self.variables.iter().filter(|v| v.kind == VarKind::Binary).count(),
            n_rows: self.rows.len(),
        }
    }

    pub fn rows_by_family(&self) -> BTreeMap<Family, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.family).or_insert(0) += 1;
        }
        out
    }

    /// Column of a structured name (`z[3,2]`) or an MPS name (`C0000007`).
    pub fn var_index(&self, name: &str) -> Option<usize> {
        if let Some(j) = self.by_name.get(name) {
            return Some(*j);
        }
        let j: usize = name.strip_prefix('C').filter(|s| s.len() == 7)?.parse().ok()?;
        (1..=self.variables.len()).contains(&j).then(|| j - 1)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Largest row or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x));
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xj)| (v.lower - xj).max(xj - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Rejects artifacts that cannot be written as a meaningful MPS file.
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Validation("artifact has no rows".into()));
        }
        if self.variables.is_empty() {
            return Err(Error::Validation("artifact has no variables".into()));
        }
        if self.by_name.len() != self.variables.len() {
            return Err(Error::Validation("duplicate variable names".into()));
        }
        for r in &self.rows {
            if r.terms.is_empty() {
                return Err(Error::Validation(format!("row {} has no terms", r.name)));
            }
            if let Some(&(j, _)) = r.terms.iter().find(|(j, _)| *j >= self.variables.len()) {
                return Err(Error::Validation(format!("row {} references column {j}", r.name)));
            }
        }
        Ok(())
    }

    /// The MILP point that represents `model`. Thresholds must keep every
    /// left-routed sample at least `eps_routing` below the split for the
    /// point to be feasible.
    pub fn encode(&self, model: &TreeModel) -> Result<Vec<f64>> {
        let lay = self.layout;
        if model.depth() != self.cfg.depth || model.basis != self.basis {
            return Err(Error::Dimension("model shape differs from the artifact".into()));
        }
        let mut x = vec![0.0; lay.n_vars()];
        for n in 1..=lay.n_internal {
            let v = &self.variables[lay.b(n)];
            x[lay.b(n)] = 0.5 * (v.lower + v.upper);
        }
        for (&n, rule) in &model.rules {
            x[lay.d(n)] = 1.0;
            x[lay.a(rule.feature, n)] = 1.0;
            x[lay.b(n)] = rule.threshold;
        }
        for (&n, leaf) in &model.leaves {
            for (k, &c) in leaf.coeffs.iter().enumerate() {
                x[lay.c(k, n)] = c;
                x[lay.cpos(k, n)] = c.max(0.0);
                x[lay.cneg(k, n)] = (-c).max(0.0);
            }
        }
        for (i, (feat, &y)) in self.data.features().iter().zip(self.data.labels()).enumerate() {
            let phi = self.basis.evaluate(feat)?;
            let target = model.route(feat)?;
            x[lay.z(i, target)] = 1.0;
            for n in 1..=lay.n_nodes {
                let yh: f64 = (0..lay.n_basis).map(|k| x[lay.c(k, n)] * phi[k]).sum();
                x[lay.yhat(i, n)] = yh;
                if n == target {
                    x[lay.delta(i, n)] = yh;
                    x[lay.ypred(i)] = yh;
                }
            }
            let r = y - x[lay.ypred(i)];
            x[lay.eps_pos(i)] = r.max(0.0);
            x[lay.eps_neg(i)] = (-r).max(0.0);
        }
        Ok(x)
    }

    fn machine_col(j: usize) -> String {
        format!("C{:07}", j + 1)
    }

    fn machine_row(r: usize) -> String {
        format!("R{:07}", r + 1)
    }
}

/// Shortest decimal rendering of `v` that fits a 12-character MPS field,
/// choosing the most accurate of fixed and exponent forms.
fn fmt12(v: f64) -> String {
    let s = format!("{v:?}");
    if s.len() <= 12 {
        return s;
    }
    let mut best: Option<(f64, String)> = None;
    let mut consider = |s: String| {
        if s.len() <= 12 {
            if let Ok(p) = s.parse::<f64>() {
                let err = (p - v).abs();
                if best.as_ref().is_none_or(|(e, _)| err < *e) {
                    best = Some((err, s));
                }
            }
        }
    };
    for p in (0..=11).rev() {
        consider(format!("{v:.p$e}"));
        consider(format!("{v:.p$}"));
    }
    best.map(|(_, s)| s).unwrap_or_else(|| format!("{v:.0e}"))
}

/// MPS name to structured name, for rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameMap {
    pub objective: String,
    pub columns: BTreeMap<String, String>,
    pub rows: BTreeMap<String, String>,
}

/// Sidecar path for an MPS file: `model.mps` -> `model.names.json`.
pub fn names_path(mps: &Path) -> PathBuf {
    mps.with_extension("names.json")
}

/// Fixed-format MPS text of the artifact.
pub fn to_mps(art: &MilpArtifact) -> Result<String> {
    art.validate()?;
    let mut s = String::new();
    let _ = writeln!(s, "NAME          SYMTREE");
    let _ = writeln!(s, "ROWS");
    let _ = writeln!(s, " N  OBJ");
    for (r, row) in art.rows.iter().enumerate() {
        let t = match row.relation {
            Relation::Le => 'L',
            Relation::Ge => 'G',
            Relation::Eq => 'E',
        };
        let _ = writeln!(s, " {t}  {}", MilpArtifact::machine_row(r));
    }
    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); art.variables.len()];
    for &(j, c) in &art.objective {
        cols[j].push(("OBJ".into(), c));
    }
    for (r, row) in art.rows.iter().enumerate() {
        for &(j, a) in &row.terms {
            if a != 0.0 {
                cols[j].push((MilpArtifact::machine_row(r), a));
            }
        }
    }
    let _ = writeln!(s, "COLUMNS");
    for (j, entries) in cols.iter().enumerate() {
        let name = MilpArtifact::machine_col(j);
        if entries.is_empty() {
            // keeps the column declared
            let _ = writeln!(s, "    {name:<8}  {:<8}  {:>12}", "OBJ", "0");
        }
        for (row, v) in entries {
            let _ = writeln!(s, "    {name:<8}  {row:<8}  {:>12}", fmt12(*v));
        }
    }
    let _ = writeln!(s, "RHS");
    for (r, row) in art.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            let _ = writeln!(s, "    RHS       {:<8}  {:>12}", MilpArtifact::machine_row(r), fmt12(row.rhs));
        }
    }
    let _ = writeln!(s, "BOUNDS");
    for (j, v) in art.variables.iter().enumerate() {
        let name = MilpArtifact::machine_col(j);
        let mut bound = |kind: &str, val: Option<f64>| {
            let _ = match val {
                Some(x) => writeln!(s, " {kind} BND       {name:<8}  {:>12}", fmt12(x)),
                None => writeln!(s, " {kind} BND       {name}"),
            };
        };
        match (v.kind, v.lower, v.upper) {
            (VarKind::Binary, _, _) => bound("BV", None),
            (_, lo, hi) if lo == f64::NEG_INFINITY && hi == f64::INFINITY => bound("FR", None),
            (_, lo, hi) if lo == hi => bound("FX", Some(lo)),
            (_, lo, hi) => {
                if lo == f64::NEG_INFINITY {
                    bound("MI", None);
                } else if lo != 0.0 {
                    bound("LO", Some(lo));
                }
                if hi.is_finite() {
                    bound("UP", Some(hi));
                }
            }
        }
    }
    let _ = writeln!(s, "ENDATA");
    Ok(s)
}

pub fn name_map(art: &MilpArtifact) -> NameMap {
    NameMap {
        objective: "OBJ".into(),
        columns: art
            .variables
            .iter()
            .enumerate()
            .map(|(j, v)| (MilpArtifact::machine_col(j), v.name.clone()))
            .collect(),
        rows: art
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| (MilpArtifact::machine_row(r), row.name.clone()))
            .collect(),
    }
}

/// Writes `path` and its name-map sidecar.
pub fn write_mps(art: &MilpArtifact, path: &Path) -> Result<()> {
    let text = to_mps(art)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let side = names_path(path);
    let json = serde_json::to_string_pretty(&name_map(art)).expect("name map serializes");
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Contents of an MPS file as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsModel {
    pub name: String,
    /// `(name, type)` with type one of `N`, `L`, `G`, `E`.
    pub rows: Vec<(String, char)>,
    pub columns: Vec<String>,
    /// `(column, row, value)` nonzeros, objective included.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: BTreeMap<usize, f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub binary: Vec<bool>,
}

impl MpsModel {
    /// Constraint rows only; the objective row is excluded.
    pub fn counts(&self) -> Counts {
        Counts {
            n_vars: self.columns.len(),
            n_binary: self.binary.iter().filter(|&&b| b).count(),
            n_rows: self.rows.iter().filter(|(_, t)| *t != 'N').count(),
        }
    }
}

/// Parses the MPS subset produced by [`to_mps`]: fixed or free spacing,
/// `N/L/G/E` rows, `RHS`, and `UP/LO/FX/FR/MI/BV` bounds.
pub fn parse_mps(text: &str) -> Result<MpsModel> {
    let mut m = MpsModel {
        name: String::new(),
        rows: Vec::new(),
        columns: Vec::new(),
        entries: Vec::new(),
        rhs: BTreeMap::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        binary: Vec::new(),
    };
    let mut row_idx: HashMap<String, usize> = HashMap::new();
    let mut col_idx: HashMap<String, usize> = HashMap::new();
    let mut section = "";
    let mut ended = false;
    for (ln, line) in text.lines().enumerate() {
        let ctx = || format!("line {}", ln + 1);
        if line.trim().is_empty() || line.starts_with('*') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if !line.starts_with(' ') {
            section = match tok[0] {
                "NAME" => {
                    m.name = tok.get(1).unwrap_or(&"").to_string();
                    "NAME"
                }
                "ROWS" => "ROWS",
                "COLUMNS" => "COLUMNS",
                "RHS" => "RHS",
                "BOUNDS" => "BOUNDS",
                "RANGES" => return Err(Error::parse(ctx(), "RANGES section is not supported")),
                "ENDATA" => {
                    ended = true;
                    break;
                }
                s => return Err(Error::parse(ctx(), format!("unknown section {s}"))),
            };
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(ctx(), format!("{s:?}: {e}")));
        match section {
            "ROWS" => {
                let [t, name] = tok[..] else {
                    return Err(Error::parse(ctx(), "expected row type and name"));
                };
                let t = match t {
                    "N" | "L" | "G" | "E" => t.chars().next().unwrap(),
                    _ => return Err(Error::parse(ctx(), format!("row type {t}"))),
                };
                if row_idx.insert(name.to_string(), m.rows.len()).is_some() {
                    return Err(Error::parse(ctx(), format!("duplicate row {name}")));
                }
                m.rows.push((name.to_string(), t));
            }
            "COLUMNS" => {
                if tok.len() != 3 && tok.len() != 5 {
                    return Err(Error::parse(ctx(), "expected column, row, value"));
                }
                let j = *col_idx.entry(tok[0].to_string()).or_insert_with(|| {
                    m.columns.push(tok[0].to_string());
                    m.lower.push(0.0);
                    m.upper.push(f64::INFINITY);
                    m.binary.push(false);
                    m.columns.len() - 1
                });
                for pair in tok[1..].chunks(2) {
                    let r = *row_idx
                        .get(pair[0])
                        .ok_or_else(|| Error::parse(ctx(), format!("unknown row {}", pair[0])))?;
                    let v = num(pair[1])?;
                    if v != 0.0 {
                        m.entries.push((j, r, v));
                    }
                }
            }
            "RHS" => {
                if tok.len() != 3 && tok.len() != 5 {
                    return Err(Error::parse(ctx(), "expected set, row, value"));
                }
                for pair in tok[1..].chunks(2) {
                    let r = *row_idx
                        .get(pair[0])
                        .ok_or_else(|| Error::parse(ctx(), format!("unknown row {}", pair[0])))?;
                    m.rhs.insert(r, num(pair[1])?);
                }
            }
            "BOUNDS" => {
                if tok.len() < 3 {
                    return Err(Error::parse(ctx(), "expected type, set, column"));
                }
                let j = *col_idx
                    .get(tok[2])
                    .ok_or_else(|| Error::parse(ctx(), format!("unknown column {}", tok[2])))?;
                let val = || {
                    tok.get(3)
                        .ok_or_else(|| Error::parse(ctx(), "missing bound value"))
                        .and_then(|s| num(s))
                };
                match tok[0] {
                    "UP" => m.upper[j] = val()?,
                    "LO" => m.lower[j] = val()?,
                    "FX" => {
                        let v = val()?;
                        m.lower[j] = v;
                        m.upper[j] = v;
                    }
                    "FR" => {
                        m.lower[j] = f64::NEG_INFINITY;
                        m.upper[j] = f64::INFINITY;
                    }
                    "MI" => m.lower[j] = f64::NEG_INFINITY,
                    "BV" => {
                        m.binary[j] = true;
                        m.lower[j] = 0.0;
                        m.upper[j] = 1.0;
                    }
                    t => return Err(Error::parse(ctx(), format!("bound type {t}"))),
                }
            }
            _ => return Err(Error::parse(ctx(), "data line outside a section")),
        }
    }
    if !ended {
        return Err(Error::parse("end of file", "missing ENDATA"));
    }
    Ok(m)
}

pub fn read_mps(path: &Path) -> Result<MpsModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mps(&text)
}

/// Variable values reported by a solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolutionValues {
    pub values: Vec<(String, f64)>,
    pub claimed_objective: Option<f64>,
}

/// Parses `name value` lines. `#` starts a comment; a comment of the form
/// `# Objective value = v` records the solver's objective.
pub fn parse_solution(text: &str) -> Result<SolutionValues> {
    let mut out = SolutionValues::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, val)) = comment.split_once('=') {
                if key.trim().eq_ignore_ascii_case("objective value") {
                    out.claimed_objective = val.trim().parse().ok();
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let [name, val] = tok[..] else {
            return Err(Error::parse(format!("line {}", ln + 1), "expected `name value`"));
        };
        let v = val
            .parse::<f64>()
            .map_err(|e| Error::parse(format!("line {}", ln + 1), format!("{val:?}: {e}")))?;
        out.values.push((name.to_string(), v));
    }
    Ok(out)
}

/// A solver assignment turned back into a tree.
#[derive(Debug, Clone)]
pub struct DecodedSolution {
    pub model: TreeModel,
    /// Objective re-scored from the decoded model.
    pub objective: f64,
    pub breakdown: Breakdown,
    pub claimed_objective: Option<f64>,
    /// Samples whose assignment variables disagree with the decoded routing.
    pub routing_mismatches: usize,
}

/// Decodes a solver assignment. Binaries are required; thresholds and leaf
/// coefficients are rebuilt from the assignment and the data when absent.
pub fn read_solution(art: &MilpArtifact, sol: &SolutionValues) -> Result<DecodedSolution> {
    let lay = art.layout;
    let mut x: Vec<Option<f64>> = vec![None; art.variables.len()];
    for (name, v) in &sol.values {
        let j = art
            .var_index(name)
            .ok_or_else(|| Error::Validation(format!("unknown variable {name}")))?;
        x[j] = Some(*v);
    }
    let mut bin = vec![false; art.variables.len()];
    for (j, v) in art.variables.iter().enumerate() {
        if v.kind != VarKind::Binary {
            continue;
        }
        let val = x[j].ok_or_else(|| Error::Validation(format!("binary {} has no value", v.name)))?;
        let r = val.round();
        if (val - r).abs() > INTEGRALITY_TOL || !(r == 0.0 || r == 1.0) {
            return Err(Error::Integrality(format!("{} = {val}", v.name)));
        }
        bin[j] = r == 1.0;
    }

    let d = |n: usize| bin[lay.d(n)];
    if !d(1) {
        return Err(Error::Structure("root node does not branch".into()));
    }
    for n in 2..=lay.n_nodes {
        if d(n) && !d(n / 2) {
            return Err(Error::Structure(format!("node {n} branches under a non-branching parent")));
        }
    }
    for n in lay.n_internal + 1..=lay.n_nodes {
        if d(n) {
            return Err(Error::Structure(format!("terminal node {n} branches")));
        }
    }

    let feats = art.data.features();
    let mut rules = BTreeMap::new();
    for n in 1..=lay.n_internal {
        let chosen: Vec<usize> = (0..lay.n_features).filter(|&f| bin[lay.a(f, n)]).collect();
        if !d(n) {
            if !chosen.is_empty() {
                return Err(Error::Structure(format!("feature selected at non-branching node {n}")));
            }
            continue;
        }
        let [f] = chosen[..] else {
            return Err(Error::Structure(format!("node {n} selects {} features", chosen.len())));
        };
        let threshold = match x[lay.b(n)] {
            Some(b) => b,
            None => {
                // samples assigned below each child bound the split
                let under = |child: usize| -> Vec<f64> {
                    (0..lay.n_data)
                        .filter(|&i| {
                            (1..=lay.n_nodes)
                                .any(|m| bin[lay.z(i, m)] && ancestors(m).iter().any(|&(a, _)| a == n) && in_subtree(m, child))
                        })
                        .map(|i| feats[i][f])
                        .collect()
                };
                let max_l = under(2 * n).into_iter().fold(f64::NEG_INFINITY, f64::max);
                let min_r = under(2 * n + 1).into_iter().fold(f64::INFINITY, f64::min);
                match (max_l.is_finite(), min_r.is_finite()) {
                    (true, true) => 0.5 * (max_l + min_r),
                    (true, false) => max_l + art.cfg.eps_routing,
                    (false, true) => min_r,
                    (false, false) => feats.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min),
                }
            }
        };
        rules.insert(n, (f, threshold));
    }

    let (c_lb, c_ub) = art.cfg.c_bounds;
    let bounds = Bounds {
        c_lb,
        c_ub,
        y_lb: art.y_bounds.0,
        y_ub: art.y_bounds.1,
    };
    let is_leaf = |n: usize| !d(n) && (n == 1 || d(n / 2));
    let leaves: Vec<usize> = (1..=lay.n_nodes).filter(|&n| is_leaf(n)).collect();
    let mut builder = TreeModel::builder(art.cfg.depth, art.basis.clone(), bounds);
    for (&n, &(f, t)) in &rules {
        builder = builder.branch(n, f, t);
    }
    for &n in &leaves {
        builder = builder.leaf(n, vec![0.0; lay.n_basis]);
    }
    let mut model = builder.build();

    let routes = feats.iter().map(|r| model.route(r)).collect::<Result<Vec<_>>>()?;
    let phi = feats.iter().map(|r| art.basis.evaluate(r)).collect::<Result<Vec<_>>>()?;
    for &n in &leaves {
        let given: Option<Vec<f64>> = (0..lay.n_basis).map(|k| x[lay.c(k, n)]).collect();
        let coeffs = match given {
            // solver noise may overshoot the box slightly
            Some(c) => c.into_iter().map(|v| v.clamp(c_lb, c_ub)).collect(),
            None => {
                let idx: Vec<usize> = (0..lay.n_data).filter(|&i| routes[i] == n).collect();
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| phi[i].clone()).collect();
                let ys: Vec<f64> = idx.iter().map(|&i| art.data.labels()[i]).collect();
                L1Problem::new(&rows, &ys, 1.0 / lay.n_data as f64, art.cfg.lambda_m, art.cfg.c_bounds)
                    .with_output_bounds(OutputBounds {
                        points: &phi,
                        lo: art.y_bounds.0,
                        hi: art.y_bounds.1,
                    })
                    .solve()?
                    .coeffs
            }
        };
        model.leaves.get_mut(&n).expect("leaf inserted").coeffs = coeffs;
    }
    model.ensure_valid()?;

    let routing_mismatches = (0..lay.n_data)
        .filter(|&i| {
            let assigned: Vec<usize> = (1..=lay.n_nodes).filter(|&n| bin[lay.z(i, n)]).collect();
            assigned != [routes[i]]
        })
        .count();
    let (objective, breakdown) = objective_of(&model, &art.data, &art.cfg)?;
    debug_assert!(model.topology.kind(1) == NodeKind::Branch);
    Ok(DecodedSolution {
        model,
        objective,
        breakdown,
        claimed_objective: sol.claimed_objective,
        routing_mismatches,
    })
}

fn in_subtree(mut n: usize, root: usize) -> bool {
    while n > root {
        n /= 2;
    }
    n == root
}

/// Optimum of a small MILP found by depth-first enumeration of the binaries,
/// pruned by row activity bounds, with an LP over the continuous variables
/// at every complete assignment.
#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub values: Vec<f64>,
    pub objective: f64,
    pub lps_solved: usize,
}

/// Refuses problems needing more than `node_limit` search nodes.
pub fn solve_by_enumeration(art: &MilpArtifact, node_limit: usize) -> Result<EnumerationResult> {
    art.validate()?;
    let binaries: Vec<usize> = (0..art.variables.len())
        .filter(|&j| art.variables[j].kind == VarKind::Binary)
        .collect();
    let continuous: Vec<usize> = (0..art.variables.len())
        .filter(|&j| art.variables[j].kind == VarKind::Continuous)
        .collect();
    let mut col_pos = vec![usize::MAX; art.variables.len()];
    for (p, &j) in continuous.iter().enumerate() {
        col_pos[j] = p;
    }
    let mut state = Search {
        art,
        binaries: &binaries,
        continuous: &continuous,
        col_pos: &col_pos,
        fixed: vec![None; art.variables.len()],
        best: None,
        nodes: 0,
        node_limit,
        lps: 0,
    };
    state.dfs(0)?;
    let (objective, values) = state
        .best
        .ok_or_else(|| Error::Infeasible("no binary assignment admits a feasible LP".into()))?;
    Ok(EnumerationResult {
        values,
        objective,
        lps_solved: state.lps,
    })
}

struct Search<'a> {
    art: &'a MilpArtifact,
    binaries: &'a [usize],
    continuous: &'a [usize],
    col_pos: &'a [usize],
    fixed: Vec<Option<f64>>,
    best: Option<(f64, Vec<f64>)>,
    nodes: usize,
    node_limit: usize,
    lps: usize,
}

impl Search<'_> {
    fn possibly_feasible(&self) -> bool {
        let tol = 1e-9;
        self.art.rows.iter().all(|r| {
            let (mut lo, mut hi) = (0.0, 0.0);
            for &(j, a) in &r.terms {
                let (l, u) = match self.fixed[j] {
                    Some(v) => (v, v),
                    None => (self.art.variables[j].lower, self.art.variables[j].upper),
                };
                let (p, q) = (a * l, a * u);
                lo += p.min(q);
                hi += p.max(q);
            }
            match r.relation {
                Relation::Le => lo <= r.rhs + tol,
                Relation::Ge => hi >= r.rhs - tol,
                Relation::Eq => lo <= r.rhs + tol && hi >= r.rhs - tol,
            }
        })
    }

    fn dfs(&mut self, depth: usize) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Error::Precondition(format!(
                "enumeration exceeded {} search nodes",
                self.node_limit
            )));
        }
        if !self.possibly_feasible() {
            return Ok(());
        }
        if depth == self.binaries.len() {
            return self.solve_leaf();
        }
        let j = self.binaries[depth];
        for v in [0.0, 1.0] {
            self.fixed[j] = Some(v);
            self.dfs(depth + 1)?;
        }
        self.fixed[j] = None;
        Ok(())
    }

    fn solve_leaf(&mut self) -> Result<()> {
        let art = self.art;
        let nc = self.continuous.len();
        let mut obj = vec![0.0; nc];
        let mut base = 0.0;
        for &(j, c) in &art.objective {
            match self.fixed[j] {
                Some(v) => base += c * v,
                None => obj[self.col_pos[j]] += c,
            }
        }
        let mut lp = LpProblem::new(obj);
        for (p, &j) in self.continuous.iter().enumerate() {
            let v = &art.variables[j];
            lp.set_bounds(p, v.lower, v.upper);
        }
        for r in &art.rows {
            let mut coeffs = vec![0.0; nc];
            let mut rhs = r.rhs;
            let mut any = false;
            for &(j, a) in &r.terms {
                match self.fixed[j] {
                    Some(v) => rhs -= a * v,
                    None => {
                        coeffs[self.col_pos[j]] += a;
                        any = true;
                    }
                }
            }
            if any {
                lp.add_row(coeffs, r.relation, rhs);
            }
        }
        self.lps += 1;
        let sol = solve_lp(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Ok(());
        }
        let total = base + sol.objective;
        if self.best.as_ref().is_none_or(|(b, _)| total < b - 1e-12) {
            let mut values: Vec<f64> = self.fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
            for (p, &j) in self.continuous.iter().enumerate() {
                values[j] = sol.x[p];
            }
            self.best = Some((total, values));
        }
        Ok(())
    }
}
