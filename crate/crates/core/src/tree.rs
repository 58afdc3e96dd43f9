//! Symbolic decision trees: depth-capped binary trees with axis-aligned
//! splits and basis-function expressions in the leaves.
//!
//! Nodes are numbered heap-style: the root is 1 and node `n` has children
//! `2n` (taken when `x[f] < b`) and `2n + 1` (taken when `x[f] >= b`).
//! Pruned positions are kept as [`NodeKind::Inactive`] so that ids stay
//! stable across topologies.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::basis::{canonical_basis, BasisSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Branch,
    Leaf,
    Inactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Number of node positions in a complete tree of depth `depth`.
pub fn node_count(depth: usize) -> usize {
    (1usize << (depth + 1)) - 1
}

/// Depth of node `n` (root has depth 0).
pub fn node_depth(n: usize) -> usize {
    debug_assert!(n >= 1);
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

/// Path from the root to the parent of `n`, with the direction taken at
/// each ancestor.
pub fn ancestors(n: usize) -> Vec<(usize, Side)> {
    let mut path = Vec::with_capacity(node_depth(n));
    let mut cur = n;
    while cur > 1 {
        let side = if cur % 2 == 0 { Side::Left } else { Side::Right };
        cur /= 2;
        path.push((cur, side));
    }
    path.reverse();
    path
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    kinds: Vec<NodeKind>,
}

impl TreeTopology {
    /// All positions inactive.
    pub fn empty(depth: usize) -> Self {
        TreeTopology {
            depth,
            kinds: vec![NodeKind::Inactive; node_count(depth)],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, n: usize) -> NodeKind {
        n.checked_sub(1)
            .and_then(|i| self.kinds.get(i))
            .copied()
            .unwrap_or(NodeKind::Inactive)
    }

    pub fn set(&mut self, n: usize, kind: NodeKind) {
        self.kinds[n - 1] = kind;
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> {
        1..=self.kinds.len()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<usize> {
        self.ids().filter(|&n| self.kind(n) == kind).collect()
    }

    pub fn branch_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == NodeKind::Branch).count()
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.kinds.len() != node_count(self.depth) {
            out.push(Violation::structure(
                None,
                format!(
                    "depth {} needs {} nodes, found {}",
                    self.depth,
                    node_count(self.depth),
                    self.kinds.len()
                ),
            ));
            return out;
        }
        let root = self.kind(1);
        if self.depth >= 1 && root != NodeKind::Branch {
            out.push(Violation::structure(Some(1), "root must be a branch node"));
        }
        if self.depth == 0 && root != NodeKind::Leaf {
            out.push(Violation::structure(Some(1), "a depth-0 tree is a single leaf"));
        }
        for n in self.ids() {
            let kind = self.kind(n);
            if n > 1 && kind != NodeKind::Inactive && self.kind(n / 2) != NodeKind::Branch {
                out.push(Violation::structure(
                    Some(n),
                    format!("{kind:?} node below non-branch parent {}", n / 2),
                ));
            }
            if kind == NodeKind::Branch {
                if node_depth(n) == self.depth {
                    out.push(Violation::structure(Some(n), "branch node at maximal depth"));
                } else {
                    for child in [2 * n, 2 * n + 1] {
                        if self.kind(child) == NodeKind::Inactive {
                            out.push(Violation::structure(
                                Some(n),
                                format!("branch node has inactive child {child}"),
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Axis-aligned split `x[feature] < threshold` (left) vs `>=` (right).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRule {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafExpression {
    pub coeffs: Vec<f64>,
}

impl LeafExpression {
    pub fn zeros(n: usize) -> Self {
        LeafExpression {
            coeffs: vec![0.0; n],
        }
    }

    pub fn eval_features(&self, phi: &[f64]) -> f64 {
        self.coeffs.iter().zip(phi).map(|(c, p)| c * p).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

/// Coefficient and output bounds a model was trained under.
///
/// Infinite values mean "unbounded".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub c_lb: f64,
    pub c_ub: f64,
    pub y_lb: f64,
    pub y_ub: f64,
}

impl Bounds {
    pub fn unbounded() -> Self {
        Bounds {
            c_lb: f64::NEG_INFINITY,
            c_ub: f64::INFINITY,
            y_lb: f64::NEG_INFINITY,
            y_ub: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Structure,
    Rule,
    Leaf,
    Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, node: Option<usize>, detail: impl Into<String>) -> Self {
        Violation {
            node,
            kind,
            detail: detail.into(),
        }
    }

    fn structure(node: Option<usize>, detail: impl Into<String>) -> Self {
        Violation::new(ViolationKind::Structure, node, detail)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{:?} (node {n}): {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub topology: TreeTopology,
    pub rules: BTreeMap<usize, BranchRule>,
    pub leaves: BTreeMap<usize, LeafExpression>,
    pub basis: BasisSet,
    pub bounds: Bounds,
}

impl TreeModel {
    pub fn builder(depth: usize, basis: BasisSet, bounds: Bounds) -> TreeBuilder {
        TreeBuilder {
            model: TreeModel {
                topology: TreeTopology::empty(depth),
                rules: BTreeMap::new(),
                leaves: BTreeMap::new(),
                basis,
                bounds,
            },
        }
    }

    /// A model with no splits: one expression for the whole domain.
    pub fn single_leaf(basis: BasisSet, coeffs: Vec<f64>, bounds: Bounds) -> Self {
        TreeModel::builder(0, basis, bounds).leaf(1, coeffs).build()
    }

    pub fn depth(&self) -> usize {
        self.topology.depth()
    }

    /// Id of the leaf reached by `x`.
    pub fn route(&self, x: &[f64]) -> Result<usize> {
        let mut n = 1;
        loop {
            match self.topology.kind(n) {
                NodeKind::Leaf => return Ok(n),
                NodeKind::Inactive => {
                    return Err(Error::ModelInvalid(format!("routing reached inactive node {n}")))
                }
                NodeKind::Branch => {
                    let rule = self.rules.get(&n).ok_or_else(|| {
                        Error::ModelInvalid(format!("branch node {n} has no rule"))
                    })?;
                    let v = *x.get(rule.feature).ok_or_else(|| {
                        Error::Dimension(format!(
                            "node {n} splits on feature {} but input has {} entries",
                            rule.feature,
                            x.len()
                        ))
                    })?;
                    n = if v < rule.threshold { 2 * n } else { 2 * n + 1 };
                }
            }
        }
    }

    pub fn leaf(&self, n: usize) -> Result<&LeafExpression> {
        self.leaves
            .get(&n)
            .ok_or_else(|| Error::ModelInvalid(format!("leaf node {n} has no expression")))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let leaf = self.leaf(self.route(x)?)?;
        let phi = self.basis.evaluate(x)?;
        Ok(leaf.eval_features(&phi))
    }

    /// Number of branch nodes.
    pub fn complexity(&self) -> usize {
        self.topology.branch_count()
    }

    /// Sum of absolute leaf coefficients.
    pub fn coefficient_l1(&self) -> f64 {
        self.leaves.values().map(LeafExpression::l1_norm).sum()
    }

    /// Checks every structural and numeric invariant; an empty list means
    /// the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        use ViolationKind as K;
        let mut out = self.topology.violations();
        let b = self.bounds;
        if !(b.c_lb <= b.c_ub) {
            out.push(Violation::new(K::Bounds, None, "c_lb > c_ub"));
        }
        if !(b.y_lb <= b.y_ub) {
            out.push(Violation::new(K::Bounds, None, "y_lb > y_ub"));
        }
        for n in self.topology.ids() {
            let kind = self.topology.kind(n);
            match (kind, self.rules.get(&n)) {
                (NodeKind::Branch, None) => {
                    out.push(Violation::new(K::Rule, Some(n), "branch node without rule"))
                }
                (NodeKind::Branch, Some(r)) if !r.threshold.is_finite() => out.push(
                    Violation::new(K::Rule, Some(n), format!("threshold {} not finite", r.threshold)),
                ),
                (NodeKind::Leaf | NodeKind::Inactive, Some(_)) => out.push(Violation::new(
                    K::Rule,
                    Some(n),
                    format!("rule stored on {kind:?} node"),
                )),
                _ => {}
            }
            match (kind, self.leaves.get(&n)) {
                (NodeKind::Leaf, None) => {
                    out.push(Violation::new(K::Leaf, Some(n), "leaf node without expression"))
                }
                (NodeKind::Leaf, Some(leaf)) => {
                    if leaf.coeffs.len() != self.basis.len() {
                        out.push(Violation::new(
                            K::Leaf,
                            Some(n),
                            format!(
                                "{} coefficients for {} basis functions",
                                leaf.coeffs.len(),
                                self.basis.len()
                            ),
                        ));
                    }
                    for (k, &c) in leaf.coeffs.iter().enumerate() {
                        if !c.is_finite() {
                            out.push(Violation::new(
                                K::Leaf,
                                Some(n),
                                format!("coefficient {} is {c}", k + 1),
                            ));
                        } else if c < b.c_lb || c > b.c_ub {
                            out.push(Violation::new(
                                K::Bounds,
                                Some(n),
                                format!(
                                    "coefficient {} = {c} outside [{}, {}]",
                                    k + 1,
                                    b.c_lb,
                                    b.c_ub
                                ),
                            ));
                        }
                    }
                }
                (NodeKind::Branch | NodeKind::Inactive, Some(_)) => out.push(Violation::new(
                    K::Leaf,
                    Some(n),
                    format!("expression stored on {kind:?} node"),
                )),
                _ => {}
            }
        }
        for &n in self.rules.keys().chain(self.leaves.keys()) {
            if n == 0 || n > self.topology.len() {
                out.push(Violation::structure(Some(n), "node id outside the tree"));
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Fails with the first violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::ModelInvalid(v.to_string())),
        }
    }

    /// Human-readable rendering of the splits and leaf expressions.
    pub fn describe(&self) -> String {
        let labels = self.basis.labels();
        let mut s = String::new();
        for n in self.topology.ids() {
            let indent = "  ".repeat(node_depth(n));
            match self.topology.kind(n) {
                NodeKind::Branch => {
                    if let Some(r) = self.rules.get(&n) {
                        s += &format!("{indent}[{n}] x[{}] < {}\n", r.feature, r.threshold);
                    }
                }
                NodeKind::Leaf => {
                    let terms: Vec<String> = self
                        .leaves
                        .get(&n)
                        .map(|l| {
                            l.coeffs
                                .iter()
                                .zip(&labels)
                                .filter(|(c, _)| **c != 0.0)
                                .map(|(c, lab)| format!("{c:+.6}*{lab}"))
                                .collect()
                        })
                        .unwrap_or_default();
                    let body = if terms.is_empty() { "0".to_string() } else { terms.join(" ") };
                    s += &format!("{indent}[{n}] y = {body}\n");
                }
                NodeKind::Inactive => {}
            }
        }
        s
    }
}

/// Incremental construction; unspecified nodes stay inactive.
pub struct TreeBuilder {
    model: TreeModel,
}

impl TreeBuilder {
    pub fn branch(mut self, n: usize, feature: usize, threshold: f64) -> Self {
        self.model.topology.set(n, NodeKind::Branch);
        self.model.rules.insert(n, BranchRule { feature, threshold });
        self
    }

    pub fn leaf(mut self, n: usize, coeffs: Vec<f64>) -> Self {
        self.model.topology.set(n, NodeKind::Leaf);
        self.model.leaves.insert(n, LeafExpression { coeffs });
        self
    }

    /// Returns the model without validating it.
    pub fn build(self) -> TreeModel {
        self.model
    }
}

/// Depth-2 reference controller for the CSTR case study: splits at 0.64,
/// 0.56 and 0.69 with the published leaf coefficients over the canonical
/// 19-function basis.
pub fn reference_cstr_model() -> TreeModel {
    let leaf = |entries: &[(usize, f64)]| {
        let mut c = vec![0.0; 19];
        for &(id, v) in entries {
            c[id - 1] = v;
        }
        c
    };
    let node4 = leaf(&[
        (1, 6.241),
        (10, 73.186),
        (11, 53.793),
        (15, 0.012),
        (16, -0.262),
        (17, 1.426),
        (18, -72.367),
    ]);
    let node5 = leaf(&[(10, 50.035), (15, -1.62), (16, 20.739)]);
    let node6 = leaf(&[(9, 80.413), (10, 1.336), (15, -0.454)]);
    let node7 = leaf(&[(1, 71.983), (7, 1.088), (9, -0.407), (15, 0.421)]);
    let bounds = Bounds {
        c_lb: -100.0,
        c_ub: 100.0,
        y_lb: -7.5,
        y_ub: 82.5,
    };
    TreeModel::builder(2, canonical_basis(), bounds)
        .branch(1, 0, 0.64)
        .branch(2, 0, 0.56)
        .branch(3, 0, 0.69)
        .leaf(4, node4)
        .leaf(5, node5)
        .leaf(6, node6)
        .leaf(7, node7)
        .build()
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDoc {
    c_lb: Option<f64>,
    c_ub: Option<f64>,
    y_lb: Option<f64>,
    y_ub: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: usize,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    depth: usize,
    bounds: BoundsDoc,
    basis: Vec<String>,
    nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn to_doc(model: &TreeModel, provenance: Option<serde_json::Value>) -> TreeDoc {
    let b = model.bounds;
    let nodes = model
        .topology
        .ids()
        .map(|n| {
            let kind = model.topology.kind(n);
            let rule = model.rules.get(&n);
            NodeDoc {
                id: n,
                kind,
                feature: rule.map(|r| r.feature),
                threshold: rule.map(|r| r.threshold),
                coeffs: model.leaves.get(&n).map(|l| l.coeffs.clone()),
            }
        })
        .collect();
    TreeDoc {
        depth: model.depth(),
        bounds: BoundsDoc {
            c_lb: finite_or_none(b.c_lb),
            c_ub: finite_or_none(b.c_ub),
            y_lb: finite_or_none(b.y_lb),
            y_ub: finite_or_none(b.y_ub),
        },
        basis: model.basis.labels(),
        nodes,
        provenance,
    }
}

fn from_doc(doc: TreeDoc) -> Result<TreeModel> {
    if doc.depth > 16 {
        return Err(Error::parse("depth", format!("depth {} is too large", doc.depth)));
    }
    let basis = BasisSet::from_labels(&doc.basis)?;
    let bounds = Bounds {
        c_lb: doc.bounds.c_lb.unwrap_or(f64::NEG_INFINITY),
        c_ub: doc.bounds.c_ub.unwrap_or(f64::INFINITY),
        y_lb: doc.bounds.y_lb.unwrap_or(f64::NEG_INFINITY),
        y_ub: doc.bounds.y_ub.unwrap_or(f64::INFINITY),
    };
    let mut b = TreeModel::builder(doc.depth, basis, bounds);
    let count = node_count(doc.depth);
    let mut seen = vec![false; count + 1];
    for (i, node) in doc.nodes.into_iter().enumerate() {
        let ctx = |field: &str| format!("nodes[{i}].{field}");
        if node.id == 0 || node.id > count {
            return Err(Error::parse(
                ctx("id"),
                format!("id {} outside 1..={count}", node.id),
            ));
        }
        if std::mem::replace(&mut seen[node.id], true) {
            return Err(Error::parse(ctx("id"), format!("duplicate node {}", node.id)));
        }
        b = match node.kind {
            NodeKind::Branch => {
                let feature = node
                    .feature
                    .ok_or_else(|| Error::parse(ctx("feature"), "branch node needs a feature"))?;
                let threshold = node.threshold.ok_or_else(|| {
                    Error::parse(ctx("threshold"), "branch node needs a threshold")
                })?;
                b.branch(node.id, feature, threshold)
            }
            NodeKind::Leaf => {
                let coeffs = node
                    .coeffs
                    .ok_or_else(|| Error::parse(ctx("coeffs"), "leaf node needs coefficients"))?;
                b.leaf(node.id, coeffs)
            }
            NodeKind::Inactive => b,
        };
    }
    if !seen[1] {
        return Err(Error::parse("nodes", "root node 1 is missing"));
    }
    Ok(b.build())
}

fn json_error(e: serde_json::Error) -> Error {
    Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
}

/// Serializes a model to its `.tree.json` document.
pub fn serialize(model: &TreeModel) -> String {
    to_document(model, None)
}

/// Like [`serialize`], attaching an arbitrary provenance record.
pub fn to_document(model: &TreeModel, provenance: Option<serde_json::Value>) -> String {
    serde_json::to_string_pretty(&to_doc(model, provenance)).expect("tree document serializes")
}

pub fn deserialize(text: &str) -> Result<TreeModel> {
    from_document(text).map(|(m, _)| m)
}

/// Parses a `.tree.json` document, returning the model and its provenance.
pub fn from_document(text: &str) -> Result<(TreeModel, Option<serde_json::Value>)> {
    let doc: TreeDoc = serde_json::from_str(text).map_err(json_error)?;
    let prov = doc.provenance.clone();
    Ok((from_doc(doc)?, prov))
}
