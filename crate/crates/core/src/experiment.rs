//! The CSTR case study end to end: data, the four models, and their metrics.

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_cart_constant, fit_cart_linear, fit_sparse};
use crate::basis::canonical_basis;
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::learner::{fit_tree, FitReport};
use crate::mpc::{generate_dataset, label_states};
use crate::sim::{iae, latency_stats, mae, simulate_with, test_states, Controller, Metrics, SimTrace, H_INT};
use crate::tree::TreeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// L1 regression over the full basis, no splits.
    Sparse,
    /// Greedy tree with constant leaves.
    Cart,
    /// Greedy tree with affine leaves.
    Lintree,
}

pub fn training_data(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    generate_dataset(&cfg.mpc_spec(), d.n_train, d.range.0, d.range.1, d.mode, d.seed)
}

/// Held-out MPC-labeled states that avoid the training states.
pub fn test_data(cfg: &RunConfig, train: &Dataset) -> Result<Dataset> {
    let d = &cfg.data;
    let xs = test_states(d.n_test, d.range.0, d.range.1, d.seed, &train.column(0));
    label_states(&cfg.mpc_spec(), &xs)
}

pub fn train_symbolic(cfg: &RunConfig, train: &Dataset) -> Result<FitReport> {
    fit_tree(train, &canonical_basis(), &cfg.learn)
}

/// Coefficient penalty of the sparse baseline unless overridden: plain
/// mean absolute error.
pub const SPARSE_LAMBDA_M: f64 = 0.0;

/// Baselines share the tree depth and coefficient bounds of the symbolic
/// learner. `sparse_lambda_m` defaults to [`SPARSE_LAMBDA_M`].
pub fn train_baseline(
    kind: BaselineKind,
    cfg: &RunConfig,
    train: &Dataset,
    sparse_lambda_m: Option<f64>,
) -> Result<TreeModel> {
    let l = &cfg.learn;
    Ok(match kind {
        BaselineKind::Sparse => {
            let lambda = sparse_lambda_m.unwrap_or(SPARSE_LAMBDA_M);
            fit_sparse(train, &canonical_basis(), lambda, l.c_bounds)?.model
        }
        BaselineKind::Cart => fit_cart_constant(train, l.depth),
        BaselineKind::Lintree => fit_cart_linear(train, l.depth),
    })
}

/// Closed-loop run from the configured scenario.
pub fn run_closed_loop(cfg: &RunConfig, ctrl: &Controller) -> Result<SimTrace> {
    let s = &cfg.sim;
    simulate_with(&cfg.plant, ctrl, s.x0, s.t_final, s.dt_sample, cfg.mpc.u_bounds, H_INT)
}

/// Closed-loop and held-out metrics of one controller.
pub fn evaluate(cfg: &RunConfig, ctrl: &Controller, test: &Dataset) -> Result<(SimTrace, Metrics)> {
    let trace = run_closed_loop(cfg, ctrl)?;
    let (latency_mean_s, latency_max_s) = latency_stats(&trace);
    let metrics = Metrics {
        iae: iae(&trace, cfg.mpc.x_sp),
        mae_test: mae(ctrl, test, cfg.mpc.u_bounds)?,
        latency_mean_s,
        latency_max_s,
    };
    Ok((trace, metrics))
}
