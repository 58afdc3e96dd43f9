//! Closed-loop simulation of the CSTR under a state-feedback controller.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mpc::{plant_rhs, sample_states, solve_mpc, MpcSpec, PlantSpec, SampleMode};
use crate::tree::TreeModel;

/// Internal RK4 step, min.
pub const H_INT: f64 = 0.01;

#[derive(Debug, Clone)]
pub enum Controller {
    Mpc(MpcSpec),
    Model(TreeModel),
    Constant(f64),
}

impl Controller {
    /// Unclipped control for state `x`.
    pub fn raw(&self, x: f64) -> Result<f64> {
        match self {
            Controller::Mpc(spec) => solve_mpc(spec, x).map(|s| s.first_action),
            Controller::Model(m) => m.predict(&[x]),
            Controller::Constant(v) => Ok(*v),
        }
    }

    /// Control clipped to `u_bounds`.
    pub fn act(&self, x: f64, u_bounds: (f64, f64)) -> Result<f64> {
        let u = self.raw(x)?;
        if u.is_nan() {
            return Err(Error::Numerical(format!("controller returned NaN at x = {x}")));
        }
        Ok(u.clamp(u_bounds.0, u_bounds.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: f64,
    pub t_final: f64,
    pub dt_sample: f64,
    pub h_int: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Control applied from each sample instant; `NaN` at the final instant.
    pub controls: Vec<f64>,
    /// Seconds spent in the controller call at each instant.
    pub latencies: Vec<f64>,
    pub config: SimConfig,
}

/// One RK4 step of the plant under constant `u`.
pub fn rk4_step(plant: &PlantSpec, x: f64, u: f64, h: f64) -> f64 {
    let f = |x| plant_rhs(plant, x, u);
    let k1 = f(x);
    let k2 = f(x + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h * k2);
    let k4 = f(x + h * k3);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates over `duration` with constant `u` using steps no longer than `h`.
pub fn integrate(plant: &PlantSpec, x: f64, u: f64, duration: f64, h: f64) -> f64 {
    let steps = (duration / h - 1e-9).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    (0..steps).fold(x, |x, _| rk4_step(plant, x, u, h))
}

/// Simulates with the controls clipped to the canonical MPC input bounds.
pub fn simulate(plant: &PlantSpec, ctrl: &Controller, x0: f64, t_final: f64, dt_sample: f64) -> Result<SimTrace> {
    simulate_with(plant, ctrl, x0, t_final, dt_sample, MpcSpec::default().u_bounds, H_INT)
}

pub fn simulate_with(
    plant: &PlantSpec,
    ctrl: &Controller,
    x0: f64,
    t_final: f64,
    dt_sample: f64,
    u_bounds: (f64, f64),
    h_int: f64,
) -> Result<SimTrace> {
    plant.validate()?;
    if !(dt_sample > 0.0 && t_final >= dt_sample && h_int > 0.0 && x0.is_finite()) {
        return Err(Error::Precondition(format!(
            "need dt_sample > 0, t_final >= dt_sample, h_int > 0; got {dt_sample}, {t_final}, {h_int}"
        )));
    }
    let n = (t_final / dt_sample + 1e-9).floor() as usize;
    let mut trace = SimTrace {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n + 1),
        latencies: Vec::with_capacity(n + 1),
        config: SimConfig {
            x0,
            t_final,
            dt_sample,
            h_int,
        },
    };
    let mut x = x0;
    for step in 0..=n {
        let t = step as f64 * dt_sample;
        trace.times.push(t);
        trace.states.push(x);
        if step == n {
            trace.controls.push(f64::NAN);
            trace.latencies.push(0.0);
            break;
        }
        let start = Instant::now();
        let u = ctrl.act(x, u_bounds).map_err(|e| Error::Controller {
            time: t,
            state: vec![x],
            source: Box::new(e),
        })?;
        trace.latencies.push(start.elapsed().as_secs_f64());
        trace.controls.push(u);
        x = integrate(plant, x, u, dt_sample, h_int);
        if !x.is_finite() {
            return Err(Error::Numerical(format!("plant state diverged at t = {t}")));
        }
    }
    Ok(trace)
}

/// Sum of `|x_t - x_sp|` over the sample instants.
pub fn iae(trace: &SimTrace, x_sp: f64) -> f64 {
    trace.states.iter().map(|x| (x - x_sp).abs()).sum()
}

/// Mean absolute error of the clipped controller on `data`.
pub fn mae(ctrl: &Controller, data: &Dataset, u_bounds: (f64, f64)) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.features().iter().zip(data.labels()) {
        total += (y - ctrl.act(x[0], u_bounds)?).abs();
    }
    Ok(total / data.len() as f64)
}

/// Mean and max latency over the instants where the controller was called.
pub fn latency_stats(trace: &SimTrace) -> (f64, f64) {
    let calls = &trace.latencies[..trace.latencies.len().saturating_sub(1)];
    if calls.is_empty() {
        return (0.0, 0.0);
    }
    let mean = calls.iter().sum::<f64>() / calls.len() as f64;
    (mean, calls.iter().copied().fold(0.0, f64::max))
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,u,latency_s\n");
        for i in 0..self.times.len() {
            let u = if self.controls[i].is_nan() {
                String::new()
            } else {
                self.controls[i].to_string()
            };
            out += &format!("{},{},{},{}\n", self.times[i], self.states[i], u, self.latencies[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iae: f64,
    pub mae_test: f64,
    pub latency_mean_s: f64,
    pub latency_max_s: f64,
}

/// Held-out states: seeded uniform draws on `[lo, hi]` that avoid every
/// training state.
pub fn test_states(n: usize, lo: f64, hi: f64, seed: u64, train: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut round = 0u64;
    while out.len() < n {
        for x in sample_states(n, lo, hi, SampleMode::SeededRandom, seed.wrapping_add(round)) {
            if out.len() < n && !train.iter().any(|t| (t - x).abs() < 1e-12) {
                out.push(x);
            }
        }
        round += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iae_examples() {
        let mut t = simulate(&PlantSpec::default(), &Controller::Constant(54.0), 0.6, 1.0, 0.5).unwrap();
        assert!(iae(&t, 0.6) < 1e-9);
        t.states = vec![0.5, 0.7];
        assert!((iae(&t, 0.6) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let t = simulate(&PlantSpec::default(), &Controller::Constant(200.0), 0.3, 1.0, 0.1).unwrap();
        assert!(t.controls[..10].iter().all(|&u| u == 75.0));
        let t = simulate(&PlantSpec::default(), &Controller::Constant(-3.0), 0.3, 1.0, 0.1).unwrap();
        assert!(t.controls[..10].iter().all(|&u| u == 0.0));
    }

    #[test]
    fn grid_and_lengths() {
        let t = simulate(&PlantSpec::default(), &Controller::Constant(10.0), 0.5, 10.0, 0.1).unwrap();
        assert_eq!(t.times.len(), 101);
        assert_eq!(t.states.len(), 101);
        assert!((t.times[100] - 10.0).abs() < 1e-12);
        assert!(t.to_csv().lines().count() == 102);
    }

    #[test]
    fn bad_config_rejected() {
        let c = Controller::Constant(1.0);
        assert!(simulate(&PlantSpec::default(), &c, 0.5, 0.05, 0.1).is_err());
        assert!(simulate(&PlantSpec::default(), &c, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn test_states_avoid_training() {
        let train = sample_states(50, 0.1, 0.9, SampleMode::UniformGrid, 0);
        let t = test_states(50, 0.1, 0.9, 7, &train);
        assert_eq!(t.len(), 50);
        assert!(t.iter().all(|x| (0.1..=0.9).contains(x) && !train.contains(x)));
    }
}
