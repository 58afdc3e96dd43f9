//! CSTR plant model and the MPC oracle that labels training data.
//!
//! The MPC is solved by single shooting over the explicit-Euler model:
//! decision variables are `u_1..u_{T-1}`, states follow from `x_1 = x0`.
//! Rate and state limits enter an augmented Lagrangian whose subproblems
//! are solved by spectral projected gradient on the input box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSpec {
    /// Volume, L.
    #[serde(rename = "V")]
    pub volume: f64,
    /// Feed concentration, mol/L.
    pub x_f: f64,
    /// Rate constant, L^2/(min mol^2).
    pub k: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            volume: 50.0,
            x_f: 1.0,
            k: 2.0,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.volume, self.x_f, self.k].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("plant parameters must be positive: {self:?}")))
        }
    }

    /// Flow that holds concentration `x` at steady state.
    pub fn steady_flow(&self, x: f64) -> f64 {
        self.volume * self.k * x.powi(3) / (self.x_f - x)
    }
}

/// `dx/dt = (u/V)(x_f - x) - k x^3`.
pub fn plant_rhs(plant: &PlantSpec, x: f64, u: f64) -> f64 {
    u / plant.volume * (plant.x_f - x) - plant.k * x.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSpec {
    /// Number of discretization points.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Discretization step, min.
    pub h: f64,
    /// Terminal weight.
    #[serde(rename = "P")]
    pub terminal_weight: f64,
    pub x_sp: f64,
    /// Maximum rate of change of the flow, L/min per min.
    pub u_rate_max: f64,
    pub x_bounds: (f64, f64),
    pub u_bounds: (f64, f64),
    #[serde(skip)]
    pub plant: PlantSpec,
}

impl Default for MpcSpec {
    fn default() -> Self {
        MpcSpec {
            horizon: 10,
            h: 0.5,
            terminal_weight: 100.0,
            x_sp: 0.6,
            u_rate_max: 50.0,
            x_bounds: (0.0, 1.0),
            u_bounds: (0.0, 75.0),
            plant: PlantSpec::default(),
        }
    }
}

impl MpcSpec {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        let ok = self.horizon >= 2
            && self.h > 0.0
            && self.terminal_weight >= 0.0
            && self.u_rate_max > 0.0
            && self.x_bounds.0 < self.x_bounds.1
            && self.u_bounds.0 < self.u_bounds.1
            && self.x_sp.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid MPC specification: {self:?}")))
        }
    }

    pub fn n_controls(&self) -> usize {
        self.horizon - 1
    }

    /// Largest allowed change between consecutive controls.
    pub fn max_step(&self) -> f64 {
        self.h * self.u_rate_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x_1..x_T`.
    pub states: Vec<f64>,
    pub objective: f64,
    /// Derivative of the objective with respect to each control.
    pub gradient: Vec<f64>,
}

/// Euler rollout from `x0` with the tracking objective and its exact
/// gradient (reverse sweep through the discrete dynamics).
pub fn rollout(spec: &MpcSpec, x0: f64, u: &[f64]) -> Rollout {
    rollout_weighted(spec, x0, u, None)
}

/// [`rollout`] where the gradient also includes `sum_t w_t x_t`.
fn rollout_weighted(spec: &MpcSpec, x0: f64, u: &[f64], state_weights: Option<&[f64]>) -> Rollout {
    let p = &spec.plant;
    let t_len = spec.horizon;
    let mut x = Vec::with_capacity(t_len);
    x.push(x0);
    for t in 0..t_len - 1 {
        let xt = x[t];
        x.push(xt + spec.h * plant_rhs(p, xt, u[t]));
    }
    let dev = |t: usize| x[t] - spec.x_sp;
    let mut objective: f64 = (0..t_len).map(|t| dev(t).powi(2)).sum();
    objective += spec.terminal_weight * dev(t_len - 1).powi(2);

    let w = |t: usize| state_weights.map_or(0.0, |w| w[t]);
    let mut grad = vec![0.0; t_len - 1];
    let mut lam = 2.0 * (1.0 + spec.terminal_weight) * dev(t_len - 1) + w(t_len - 1);
    for t in (0..t_len - 1).rev() {
        let xt = x[t];
        grad[t] = lam * spec.h * (p.x_f - xt) / p.volume;
        let dfdx = 1.0 + spec.h * (-u[t] / p.volume - 3.0 * p.k * xt * xt);
        lam = 2.0 * dev(t) + w(t) + lam * dfdx;
    }
    Rollout {
        states: x,
        objective,
        gradient: grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `u_1..u_{T-1}`.
    pub controls: Vec<f64>,
    /// `x_1..x_T`.
    pub states: Vec<f64>,
    pub objective: f64,
    /// Infinity norm of the projected Lagrangian gradient.
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub first_action: f64,
    pub iterations: usize,
}

pub const KKT_TOL: f64 = 1e-6;
const MAX_OUTER: usize = 50;
const MAX_INNER: usize = 2000;

/// Constraint values `g(u) <= 0`: rate limits (scaled by the allowed
/// step) followed by state bounds on `x_2..x_T`.
struct Constraints<'a> {
    spec: &'a MpcSpec,
}

impl Constraints<'_> {
    fn n_rate(&self) -> usize {
        2 * (self.spec.n_controls() - 1)
    }

    fn count(&self) -> usize {
        self.n_rate() + 2 * (self.spec.horizon - 1)
    }

    fn values(&self, u: &[f64], states: &[f64]) -> Vec<f64> {
        let s = self.spec.max_step();
        let (lb, ub) = self.spec.x_bounds;
        let mut g = Vec::with_capacity(self.count());
        for t in 0..u.len() - 1 {
            let d = u[t + 1] - u[t];
            g.push(d / s - 1.0);
            g.push(-d / s - 1.0);
        }
        for &x in &states[1..] {
            g.push(x - ub);
            g.push(lb - x);
        }
        g
    }
}

fn project(u: &mut [f64], (lo, hi): (f64, f64)) {
    for v in u {
        *v = v.clamp(lo, hi);
    }
}

fn proj_grad_norm(u: &[f64], g: &[f64], b: (f64, f64)) -> f64 {
    u.iter()
        .zip(g)
        .map(|(&ui, &gi)| ((ui - gi).clamp(b.0, b.1) - ui).abs())
        .fold(0.0, f64::max)
}

struct Augmented<'a> {
    spec: &'a MpcSpec,
    cons: Constraints<'a>,
    x0: f64,
    mu: Vec<f64>,
    rho: f64,
}

impl Augmented<'_> {
    /// Value and gradient of the augmented Lagrangian, plus the raw
    /// constraint values.
    fn eval(&self, u: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Rollout) {
        let r0 = rollout(self.spec, self.x0, u);
        let g = self.cons.values(u, &r0.states);
        let shifted: Vec<f64> = g
            .iter()
            .zip(&self.mu)
            .map(|(&gj, &mj)| (mj + self.rho * gj).max(0.0))
            .collect();
        let penalty: f64 = shifted
            .iter()
            .zip(&self.mu)
            .map(|(s, m)| s * s - m * m)
            .sum::<f64>()
            / (2.0 * self.rho);
        let (grad, r) = self.lagrangian_grad(u, &shifted);
        (r.objective + penalty, grad, g, r)
    }

    /// Gradient of `f + sum_j m_j g_j` for multipliers `m`.
    fn lagrangian_grad(&self, u: &[f64], m: &[f64]) -> (Vec<f64>, Rollout) {
        let n_rate = self.cons.n_rate();
        let t_len = self.spec.horizon;
        let mut w = vec![0.0; t_len];
        for t in 1..t_len {
            let j = n_rate + 2 * (t - 1);
            w[t] = m[j] - m[j + 1];
        }
        let r = rollout_weighted(self.spec, self.x0, u, Some(&w));
        let mut grad = r.gradient.clone();
        let s = self.spec.max_step();
        for t in 0..u.len() - 1 {
            let net = (m[2 * t] - m[2 * t + 1]) / s;
            grad[t + 1] += net;
            grad[t] -= net;
        }
        (grad, r)
    }

    /// Spectral projected gradient with a nonmonotone Armijo search.
    fn minimize(&self, u: &mut Vec<f64>, tol: f64) -> usize {
        let b = self.spec.u_bounds;
        let (mut f, mut g, _, _) = self.eval(u);
        let mut history = vec![f];
        let mut alpha = 1.0 / g.iter().fold(1e-12_f64, |a, v| a.max(v.abs())).max(1e-12);
        for it in 0..MAX_INNER {
            if proj_grad_norm(u, &g, b) <= tol {
                return it;
            }
            let mut d: Vec<f64> = u.iter().zip(&g).map(|(&ui, &gi)| ui - alpha * gi).collect();
            project(&mut d, b);
            for (di, &ui) in d.iter_mut().zip(u.iter()) {
                *di -= ui;
            }
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let f_ref = history.iter().rev().take(10).fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let mut lambda = 1.0;
            let (mut u_new, mut res) = (u.clone(), None);
            for _ in 0..60 {
                for ((un, &ui), &di) in u_new.iter_mut().zip(u.iter()).zip(&d) {
                    *un = ui + lambda * di;
                }
                project(&mut u_new, b);
                let r = self.eval(&u_new);
                if r.0 <= f_ref + 1e-4 * lambda * slope {
                    res = Some(r);
                    break;
                }
                lambda *= 0.5;
            }
            let Some((f_new, g_new, _, _)) = res else {
                return it;
            };
            let s: Vec<f64> = u_new.iter().zip(u.iter()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|v| v * v).sum();
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
            *u = u_new;
            f = f_new;
            g = g_new;
            history.push(f);
        }
        MAX_INNER
    }
}

/// Solves the MPC from `x0`, best of three starts.
pub fn solve_mpc(spec: &MpcSpec, x0: f64) -> Result<MpcSolution> {
    spec.validate()?;
    let (xl, xu) = spec.x_bounds;
    if !(x0 >= xl && x0 <= xu) {
        return Err(Error::Precondition(format!(
            "initial state {x0} outside [{xl}, {xu}]"
        )));
    }
    let (ul, uu) = spec.u_bounds;
    let u_ss = spec.plant.steady_flow(spec.x_sp).clamp(ul, uu);
    let mut best: Option<MpcSolution> = None;
    let mut last_err = None;
    for start in [ul, uu, u_ss] {
        match solve_from(spec, x0, vec![start; spec.n_controls()]) {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                    best = Some(s);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Convergence(format!("no start converged from x0 = {x0}")))
    })
}

fn solve_from(spec: &MpcSpec, x0: f64, mut u: Vec<f64>) -> Result<MpcSolution> {
    let cons = Constraints { spec };
    let mut al = Augmented {
        spec,
        cons,
        x0,
        mu: vec![0.0; Constraints { spec }.count()],
        rho: 10.0,
    };
    let b = spec.u_bounds;
    let mut iterations = 0;
    let mut prev_viol = f64::INFINITY;
    for _ in 0..MAX_OUTER {
        iterations += al.minimize(&mut u, 0.1 * KKT_TOL);
        let (_, _, g, _) = al.eval(&u);
        let n_rate = al.cons.n_rate();
        // rate rows are scaled; report violations in input units
        let viol = g
            .iter()
            .enumerate()
            .map(|(j, &v)| if j < n_rate { v * spec.max_step() } else { v })
            .fold(0.0_f64, f64::max);
        for (m, &gj) in al.mu.iter_mut().zip(&g) {
            *m = (*m + al.rho * gj).max(0.0);
        }
        let (grad, r) = al.lagrangian_grad(&u, &al.mu);
        let kkt = proj_grad_norm(&u, &grad, b);
        if viol <= KKT_TOL && kkt <= KKT_TOL {
            return Ok(MpcSolution {
                first_action: u[0],
                controls: u,
                states: r.states,
                objective: r.objective,
                kkt_residual: kkt,
                max_violation: viol,
                iterations,
            });
        }
        if viol > 0.25 * prev_viol {
            al.rho *= 10.0;
        }
        prev_viol = viol;
    }
    Err(Error::Convergence(format!(
        "MPC from x0 = {x0} did not reach tolerance {KKT_TOL} in {MAX_OUTER} outer iterations"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    UniformGrid,
    SeededRandom,
}

/// Initial states for a dataset.
pub fn sample_states(n: usize, lo: f64, hi: f64, mode: SampleMode, seed: u64) -> Vec<f64> {
    match mode {
        SampleMode::UniformGrid if n == 1 => vec![lo],
        SampleMode::UniformGrid => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
        SampleMode::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
        }
    }
}

/// Labels each initial state with the MPC's first action.
pub fn label_states(spec: &MpcSpec, xs: &[f64]) -> Result<Dataset> {
    let ys = xs
        .par_iter()
        .map(|&x| solve_mpc(spec, x).map(|s| s.first_action))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_1d(xs, &ys)
}

pub fn generate_dataset(
    spec: &MpcSpec,
    n: usize,
    lo: f64,
    hi: f64,
    mode: SampleMode,
    seed: u64,
) -> Result<Dataset> {
    let (xl, xu) = spec.x_bounds;
    if n == 0 || !(lo <= hi) || lo < xl || hi > xu {
        return Err(Error::Precondition(format!(
            "need n >= 1 and {xl} <= lo <= hi <= {xu}, got n = {n}, [{lo}, {hi}]"
        )));
    }
    label_states(spec, &sample_states(n, lo, hi, mode, seed))
}
