//! Dense bounded-variable primal simplex for small linear programs, and the
//! least-absolute-deviation leaf fit built on top of it.
//!
//! The solver works on `min c'x  s.t.  A x = b,  l <= x <= u` after adding
//! one slack per inequality row. Phase 1 starts from a crash basis made of
//! singleton columns (slacks, residual splits) and fills the remaining rows
//! with artificials. Pricing is Dantzig's rule; after a run of degenerate
//! pivots it falls back to Bland's rule until progress resumes. The basis
//! inverse is kept explicitly and refactored periodically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Primal feasibility tolerance guaranteed on returned solutions.
pub const FEAS_TOL: f64 = 1e-8;

const DUAL_TOL: f64 = 1e-9;
const SNAP_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 40;
const DEGENERATE_RUN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min objective'x` subject to rows and per-variable bounds (infinite
/// bounds allowed).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// A problem over `n` variables with bounds `[0, inf)`.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            objective,
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "{n} variables but {} lower / {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.coeffs.len() != n {
                return Err(Error::Dimension(format!(
                    "row {i} has {} coefficients, expected {n}",
                    r.coeffs.len()
                )));
            }
            if !r.rhs.is_finite() || r.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("row {i} has non-finite data")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite objective coefficient".into()));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Numerical(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for r in &self.rows {
            let act: f64 = r.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let viol = match r.relation {
                Relation::Le => act - r.rhs,
                Relation::Ge => r.rhs - act,
                Relation::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// [`max_violation`](Self::max_violation) with each row measured
    /// relative to `1 + |rhs| + sum |a_j x_j|` and each bound relative to
    /// `1 + |bound|`.
    pub fn scaled_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_finite() {
                worst = worst.max((lo - v) / (1.0 + lo.abs()));
            }
            if hi.is_finite() {
                worst = worst.max((v - hi) / (1.0 + hi.abs()));
            }
        }
        for r in &self.rows {
            let act: f64 = r.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let mag: f64 = r.coeffs.iter().zip(x).map(|(a, v)| (a * v).abs()).sum();
            let viol = match r.relation {
                Relation::Le => act - r.rhs,
                Relation::Ge => r.rhs - act,
                Relation::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(viol / (1.0 + r.rhs.abs() + mag));
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values; meaningful only when optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    p.check()?;
    let (scaled, col_scale) = equilibrate(p);
    let mut sol = Simplex::new(&scaled).run(&scaled)?;
    if sol.status != LpStatus::Optimal {
        return Ok(sol);
    }
    for (j, v) in sol.x.iter_mut().enumerate() {
        *v *= col_scale[j];
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if *v < lo && lo - *v < SNAP_TOL * (1.0 + lo.abs()) {
            *v = lo;
        } else if *v > hi && *v - hi < SNAP_TOL * (1.0 + hi.abs()) {
            *v = hi;
        }
    }
    sol.objective = p.objective_at(&sol.x);
    let viol = p.scaled_violation(&sol.x);
    if viol > FEAS_TOL {
        return Err(Error::Numerical(format!(
            "simplex solution violates constraints by {viol:e} (relative)"
        )));
    }
    Ok(sol)
}

/// Power-of-two row then column scaling so the largest entry of every row
/// and column is near 1. Returns the scaled problem and `x = s * x_scaled`.
fn equilibrate(p: &LpProblem) -> (LpProblem, Vec<f64>) {
    let pow2 = |m: f64| if m > 0.0 { (-m.log2().round()).exp2() } else { 1.0 };
    let mut q = p.clone();
    for r in &mut q.rows {
        let f = pow2(r.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        r.coeffs.iter_mut().for_each(|v| *v *= f);
        r.rhs *= f;
    }
    let n = q.objective.len();
    let mut scale = vec![1.0; n];
    for (j, s) in scale.iter_mut().enumerate() {
        *s = pow2(q.rows.iter().fold(0.0f64, |a, r| a.max(r.coeffs[j].abs())));
    }
    for r in &mut q.rows {
        for (v, s) in r.coeffs.iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    for j in 0..n {
        q.objective[j] *= scale[j];
        q.lower[j] /= scale[j];
        q.upper[j] /= scale[j];
    }
    (q, scale)
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Simplex {
    m: usize,
    n_orig: usize,
    n_struct: usize,
    ncols: usize,
    /// Column-major constraint matrix including slacks and artificials.
    a: Vec<f64>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Position in `basis`, or `usize::MAX` when nonbasic.
    pos: Vec<usize>,
    /// Row-major explicit inverse of the basis matrix.
    binv: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl Simplex {
    fn new(p: &LpProblem) -> Self {
        let m = p.rows.len();
        let n = p.num_vars();
        let n_slack = p.rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let n_struct = n + n_slack;
        let ncols = n_struct + m;

        let mut a = vec![0.0; ncols * m];
        let mut lo = Vec::with_capacity(ncols);
        let mut hi = Vec::with_capacity(ncols);
        for (i, r) in p.rows.iter().enumerate() {
            for (j, &v) in r.coeffs.iter().enumerate() {
                a[j * m + i] = v;
            }
        }
        lo.extend_from_slice(&p.lower);
        hi.extend_from_slice(&p.upper);
        let mut s = n;
        for (i, r) in p.rows.iter().enumerate() {
            let sign = match r.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            };
            a[s * m + i] = sign;
            lo.push(0.0);
            hi.push(f64::INFINITY);
            s += 1;
        }
        lo.extend(std::iter::repeat_n(0.0, m));
        hi.extend(std::iter::repeat_n(f64::INFINITY, m));

        let x = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| {
                if l <= 0.0 && 0.0 <= h {
                    0.0
                } else if l.is_finite() {
                    l
                } else {
                    h
                }
            })
            .collect();

        Simplex {
            m,
            n_orig: n,
            n_struct,
            ncols,
            a,
            b: p.rows.iter().map(|r| r.rhs).collect(),
            lo,
            hi,
            x,
            basis: Vec::with_capacity(m),
            pos: vec![usize::MAX; ncols],
            binv: vec![0.0; m * m],
            iterations: 0,
            max_iterations: 50 * (m + ncols) + 1000,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.m..(j + 1) * self.m]
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n_struct
    }

    /// Picks a starting basis: a feasible singleton column per row where one
    /// exists, otherwise that row's artificial.
    fn crash(&mut self) {
        let m = self.m;
        let mut resid = self.b.clone();
        for j in 0..self.n_struct {
            let xj = self.x[j];
            if xj != 0.0 {
                for (i, r) in resid.iter_mut().enumerate() {
                    *r -= self.a[j * m + i] * xj;
                }
            }
        }
        // singleton structural columns, grouped by row
        let mut singles: Vec<Vec<usize>> = vec![Vec::new(); m];
        for j in 0..self.n_struct {
            let col = self.col(j);
            let mut nz = col.iter().enumerate().filter(|(_, v)| **v != 0.0);
            if let (Some((i, _)), None) = (nz.next(), nz.next()) {
                singles[i].push(j);
            }
        }
        self.basis.clear();
        for i in 0..m {
            let mut chosen = None;
            for &j in &singles[i] {
                if self.pos[j] != usize::MAX {
                    continue;
                }
                let aij = self.a[j * m + i];
                let v = self.x[j] + resid[i] / aij;
                if v >= self.lo[j] && v <= self.hi[j] {
                    self.x[j] = v;
                    chosen = Some(j);
                    break;
                }
            }
            let j = match chosen {
                Some(j) => j,
                None => {
                    let art = self.n_struct + i;
                    let sign = if resid[i] < 0.0 { -1.0 } else { 1.0 };
                    self.a[art * m + i] = sign;
                    self.x[art] = resid[i].abs();
                    art
                }
            };
            self.pos[j] = i;
            self.basis.push(j);
        }
        // artificials left out of the basis never enter
        for i in 0..m {
            let art = self.n_struct + i;
            if self.pos[art] == usize::MAX {
                self.a[art * m + i] = 1.0;
                self.hi[art] = 0.0;
                self.x[art] = 0.0;
            }
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| self.a[self.basis[k] * m + i]);
        let lu = bmat.clone().lu();
        let inv = lu.try_inverse().ok_or_else(|| {
            Error::Numerical("basis matrix became singular during refactorization".into())
        })?;
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        // x_B = B^{-1} (b - N x_N)
        let mut rhs = self.b.clone();
        for j in 0..self.ncols {
            if self.pos[j] == usize::MAX && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a[j * m + i] * xj;
                }
            }
        }
        let rhs = DVector::from_vec(rhs);
        let mut xb = lu.solve(&rhs).unwrap_or_else(|| &inv * &rhs);
        // two rounds of iterative refinement for badly scaled bases
        for _ in 0..2 {
            let r = &rhs - &bmat * &xb;
            match lu.solve(&r) {
                Some(dx) => xb += dx,
                None => break,
            }
        }
        for i in 0..m {
            self.x[self.basis[i]] = xb[i];
        }
        Ok(())
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let col = self.col(j);
        (0..m)
            .map(|i| {
                self.binv[i * m..(i + 1) * m]
                    .iter()
                    .zip(col)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (i, row) in before
            .chunks_mut(m)
            .chain(after.chunks_mut(m))
            .enumerate()
        {
            let i = if i < r { i } else { i + 1 };
            let f = alpha[i];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<PhaseEnd> {
        let m = self.m;
        let mut since_refactor = 0;
        let mut degenerate = 0;
        loop {
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::Numerical(format!(
                    "simplex exceeded {} iterations (cycling?)",
                    self.max_iterations
                )));
            }
            let bland = degenerate >= DEGENERATE_RUN;

            let mut y = vec![0.0; m];
            for (i, &bj) in self.basis.iter().enumerate() {
                let cb = cost[bj];
                if cb != 0.0 {
                    for (yk, bk) in y.iter_mut().zip(&self.binv[i * m..(i + 1) * m]) {
                        *yk += cb * bk;
                    }
                }
            }

            // pricing
            let mut entering: Option<(usize, f64, f64)> = None; // (col, dir, score)
            for j in 0..self.ncols {
                if self.pos[j] != usize::MAX || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = cost[j] - self.col(j).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
                let dir = if d < -DUAL_TOL && self.x[j] < self.hi[j] {
                    1.0
                } else if d > DUAL_TOL && self.x[j] > self.lo[j] {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir, d.abs()));
                    break;
                }
                if entering.is_none_or(|(_, _, s)| d.abs() > s) {
                    entering = Some((j, dir, d.abs()));
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let alpha = self.ftran(q);
            let mut theta = if dir > 0.0 {
                self.hi[q] - self.x[q]
            } else {
                self.x[q] - self.lo[q]
            };
            let mut leave: Option<usize> = None;
            for i in 0..m {
                let ai = alpha[i];
                if ai.abs() <= PIVOT_TOL {
                    continue;
                }
                let bj = self.basis[i];
                let rate = -dir * ai;
                let lim = if rate < 0.0 {
                    (self.x[bj] - self.lo[bj]) / -rate
                } else {
                    (self.hi[bj] - self.x[bj]) / rate
                };
                if lim.is_nan() || lim == f64::INFINITY {
                    continue;
                }
                let lim = lim.max(0.0);
                let tie = 1e-12 * theta.abs().max(1.0);
                let take = if lim < theta - tie {
                    true
                } else if lim <= theta + tie {
                    match leave {
                        None => true,
                        Some(r) if bland => bj < self.basis[r],
                        Some(r) => ai.abs() > alpha[r].abs(),
                    }
                } else {
                    false
                };
                if take {
                    theta = lim.min(theta);
                    leave = Some(i);
                }
            }
            if theta == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }

            if theta != 0.0 {
                self.x[q] += dir * theta;
                for i in 0..m {
                    self.x[self.basis[i]] -= dir * theta * alpha[i];
                }
            }
            degenerate = if theta <= 1e-11 { degenerate + 1 } else { 0 };

            match leave {
                None => {
                    // bound flip
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let out = self.basis[r];
                    self.x[out] = if -dir * alpha[r] < 0.0 {
                        self.lo[out]
                    } else {
                        self.hi[out]
                    };
                    self.pivot(r, &alpha);
                    self.pos[out] = usize::MAX;
                    self.pos[q] = r;
                    self.basis[r] = q;
                    since_refactor += 1;
                }
            }
        }
    }

    /// Moves zero-valued artificials out of the basis after phase 1.
    fn expel_artificials(&mut self) -> Result<()> {
        let m = self.m;
        for r in 0..m {
            let bj = self.basis[r];
            if !self.is_artificial(bj) {
                continue;
            }
            let row = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_struct {
                if self.pos[j] != usize::MAX {
                    continue;
                }
                let rho: f64 = self.col(j).iter().zip(&row).map(|(a, b)| a * b).sum();
                if rho.abs() > 1e-7 && best.is_none_or(|(_, v)| rho.abs() > v.abs()) {
                    best = Some((j, rho));
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.ftran(j);
                self.pivot(r, &alpha);
                self.pos[bj] = usize::MAX;
                self.x[bj] = 0.0;
                self.pos[j] = r;
                self.basis[r] = j;
            }
            // otherwise the row is redundant; the artificial stays basic at 0
        }
        for j in self.n_struct..self.ncols {
            self.hi[j] = 0.0;
            if self.pos[j] == usize::MAX {
                self.x[j] = 0.0;
            }
        }
        self.refactor()
    }

    fn run(mut self, p: &LpProblem) -> Result<LpSolution> {
        self.crash();
        self.refactor()?;

        let needs_phase1 = self.basis.iter().any(|&j| self.is_artificial(j) && self.x[j] > 0.0);
        if needs_phase1 {
            let mut cost = vec![0.0; self.ncols];
            for c in cost.iter_mut().skip(self.n_struct) {
                *c = 1.0;
            }
            self.optimize(&cost)?;
            self.refactor()?;
            let infeas: f64 = (self.n_struct..self.ncols).map(|j| self.x[j]).sum();
            let scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-9 * scale {
                return Ok(self.finish(p, LpStatus::Infeasible));
            }
        }
        self.expel_artificials()?;

        let mut cost = vec![0.0; self.ncols];
        cost[..self.n_orig].copy_from_slice(&p.objective);
        let end = self.optimize(&cost)?;
        self.refactor()?;
        let status = match end {
            PhaseEnd::Optimal => LpStatus::Optimal,
            PhaseEnd::Unbounded => LpStatus::Unbounded,
        };
        Ok(self.finish(p, status))
    }

    fn finish(&self, p: &LpProblem, status: LpStatus) -> LpSolution {
        let x: Vec<f64> = (0..self.n_orig)
            .map(|j| {
                let v = self.x[j];
                // snap round-off at the bounds; rows are rechecked afterwards
                if v < self.lo[j] && self.lo[j] - v < SNAP_TOL * (1.0 + self.lo[j].abs()) {
                    self.lo[j]
                } else if v > self.hi[j] && v - self.hi[j] < SNAP_TOL * (1.0 + self.hi[j].abs()) {
                    self.hi[j]
                } else {
                    v
                }
            })
            .collect();
        let objective = match status {
            LpStatus::Optimal => p.objective_at(&x),
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
        };
        LpSolution {
            status,
            x,
            objective,
            iterations: self.iterations,
        }
    }
}

// ---------------------------------------------------------------------------
// L1 regression
// ---------------------------------------------------------------------------

/// Box constraint `[lo, hi]` on the fitted expression, imposed at each of
/// `points` (rows of basis values).
#[derive(Debug, Clone, Copy)]
pub struct OutputBounds<'a> {
    pub points: &'a [Vec<f64>],
    pub lo: f64,
    pub hi: f64,
}

/// `min  w * sum_i |y_i - phi_i . c|  +  lambda_m * sum_k |c_k|` over the
/// box `c in [c_lb, c_ub]^K`, optionally with output bounds.
///
/// Variable layout of the LP: `c`, `c_plus`, `c_minus`, `eps_plus`,
/// `eps_minus`, then one bounded output variable per constrained point.
#[derive(Debug, Clone, Copy)]
pub struct L1Problem<'a> {
    pub phi: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub weight: f64,
    pub lambda_m: f64,
    pub c_bounds: (f64, f64),
    pub output_bounds: Option<OutputBounds<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Fit {
    pub coeffs: Vec<f64>,
    /// Objective value at `coeffs`, recomputed from the data.
    pub loss: f64,
}

impl<'a> L1Problem<'a> {
    pub fn new(phi: &'a [Vec<f64>], y: &'a [f64], weight: f64, lambda_m: f64, c_bounds: (f64, f64)) -> Self {
        L1Problem {
            phi,
            y,
            weight,
            lambda_m,
            c_bounds,
            output_bounds: None,
        }
    }

    pub fn with_output_bounds(mut self, bounds: OutputBounds<'a>) -> Self {
        self.output_bounds = Some(bounds);
        self
    }

    fn n_basis(&self) -> Option<usize> {
        self.phi
            .first()
            .or_else(|| self.output_bounds.and_then(|o| o.points.first()))
            .map(Vec::len)
    }

    fn check(&self, k: usize) -> Result<()> {
        if self.phi.len() != self.y.len() {
            return Err(Error::Dimension(format!(
                "{} basis rows for {} labels",
                self.phi.len(),
                self.y.len()
            )));
        }
        let extra = self.output_bounds.map(|o| o.points).unwrap_or(&[]);
        if let Some(bad) = self.phi.iter().chain(extra).find(|r| r.len() != k) {
            return Err(Error::Dimension(format!(
                "basis row of length {} where {k} expected",
                bad.len()
            )));
        }
        if !(self.weight > 0.0) || !(self.lambda_m >= 0.0) {
            return Err(Error::Config(format!(
                "need weight > 0 and lambda_m >= 0, got {} and {}",
                self.weight, self.lambda_m
            )));
        }
        if !(self.c_bounds.0 <= self.c_bounds.1) {
            return Err(Error::Config(format!("empty coefficient box {:?}", self.c_bounds)));
        }
        Ok(())
    }

    /// The LP whose first `K` variables are the coefficients.
    pub fn to_lp(&self, k: usize) -> LpProblem {
        let all: Vec<usize> = (0..self.output_bounds.map_or(0, |o| o.points.len())).collect();
        self.to_lp_bounding(k, &all)
    }

    /// [`L1Problem::to_lp`] with output bounds imposed only at the listed
    /// points.
    fn to_lp_bounding(&self, k: usize, bounded_pts: &[usize]) -> LpProblem {
        let n_pts = self.y.len();
        let bounded = bounded_pts.len();
        let nv = 3 * k + 2 * n_pts + bounded;
        let (cp, cm, ep, em, yh) = (k, 2 * k, 3 * k, 3 * k + n_pts, 3 * k + 2 * n_pts);

        let mut obj = vec![0.0; nv];
        for j in 0..k {
            obj[cp + j] = self.lambda_m;
            obj[cm + j] = self.lambda_m;
        }
        for i in 0..n_pts {
            obj[ep + i] = self.weight;
            obj[em + i] = self.weight;
        }
        let mut lp = LpProblem::new(obj);
        for j in 0..k {
            lp.set_bounds(j, self.c_bounds.0, self.c_bounds.1);
        }
        // phi_i . c + eps+_i - eps-_i = y_i
        for (i, (row, &yi)) in self.phi.iter().zip(self.y).enumerate() {
            let mut r = vec![0.0; nv];
            r[..k].copy_from_slice(row);
            r[ep + i] = 1.0;
            r[em + i] = -1.0;
            lp.add_row(r, Relation::Eq, yi);
        }
        // c_k - c+_k + c-_k = 0
        for j in 0..k {
            let mut r = vec![0.0; nv];
            r[j] = 1.0;
            r[cp + j] = -1.0;
            r[cm + j] = 1.0;
            lp.add_row(r, Relation::Eq, 0.0);
        }
        // phi_j . c - yhat_j = 0,  yhat_j in [lo, hi]
        if let Some(ob) = self.output_bounds {
            for (j, row) in bounded_pts.iter().map(|&p| &ob.points[p]).enumerate() {
                let mut r = vec![0.0; nv];
                r[..k].copy_from_slice(row);
                r[yh + j] = -1.0;
                lp.add_row(r, Relation::Eq, 0.0);
                lp.set_bounds(yh + j, ob.lo, ob.hi);
            }
        }
        lp
    }

    /// Objective of the L1 problem at `c`.
    pub fn loss_at(&self, c: &[f64]) -> f64 {
        let resid: f64 = self
            .phi
            .iter()
            .zip(self.y)
            .map(|(row, &yi)| (yi - row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).abs())
            .sum();
        self.weight * resid + self.lambda_m * c.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Solves the problem; `Error::Infeasible` when the output bounds cannot
    /// be met inside the coefficient box.
    pub fn solve(&self) -> Result<L1Fit> {
        let Some(k) = self.n_basis() else {
            return Ok(L1Fit {
                coeffs: Vec::new(),
                loss: 0.0,
            });
        };
        self.check(k)?;
        let (lo, hi) = self.c_bounds;
        if self.y.is_empty() && self.output_bounds.is_none() && lo <= 0.0 && 0.0 <= hi {
            return Ok(L1Fit {
                coeffs: vec![0.0; k],
                loss: 0.0,
            });
        }
        // Output bounds are added lazily: most points satisfy them at the
        // unconstrained optimum, and the final LP is exact on the rest.
        let mut active: Vec<usize> = Vec::new();
        loop {
            let sol = solve_lp(&self.to_lp_bounding(k, &active))?;
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => {
                    return Err(Error::Infeasible(
                        "no coefficients satisfy the output bounds".into(),
                    ))
                }
                LpStatus::Unbounded => {
                    return Err(Error::Numerical(
                        "L1 problem reported unbounded; objective is bounded below by 0".into(),
                    ))
                }
            }
            let coeffs = sol.x[..k].to_vec();
            let mut added = false;
            if let Some(ob) = self.output_bounds {
                for (p, row) in ob.points.iter().enumerate() {
                    let v: f64 = row.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
                    let tol = FEAS_TOL * (1.0 + v.abs());
                    if (v < ob.lo - tol || v > ob.hi + tol) && !active.contains(&p) {
                        active.push(p);
                        added = true;
                    }
                }
            }
            if !added {
                let loss = self.loss_at(&coeffs);
                return Ok(L1Fit { coeffs, loss });
            }
            active.sort_unstable();
        }
    }
}

/// Least-absolute-deviation fit of `y` on the columns of `phi` with an L1
/// penalty on the coefficients.
pub fn fit_l1(
    phi: &[Vec<f64>],
    y: &[f64],
    weight: f64,
    lambda_m: f64,
    c_bounds: (f64, f64),
) -> Result<L1Fit> {
    L1Problem::new(phi, y, weight, lambda_m, c_bounds).solve()
}
