//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_UNMET` are reported as FAIL like any other but
//! do not fail the run; any other failure does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtree_core::basis::{canonical_basis, BasisSet, ExpFactor, Form};
use symtree_core::config::RunConfig;
use symtree_core::data::Dataset;
use symtree_core::experiment::{self, BaselineKind};
use symtree_core::learner::{fit_tree, LearnConfig};
use symtree_core::lp::{fit_l1, solve_lp, LpProblem, LpStatus, Relation};
use symtree_core::milp::{build_milp, read_mps, solve_by_enumeration};
use symtree_core::mpc::{rollout, solve_mpc, MpcSolution, MpcSpec, PlantSpec};
use symtree_core::sim::{integrate, latency_stats, Controller, Metrics};
use symtree_core::tree::{deserialize, reference_cstr_model, serialize, NodeKind, TreeModel};

// tolerances
const COUNT_TOL: (i64, i64, i64) = (5, 5, 10);
const PAPER_COUNTS: (i64, i64, i64) = (1615, 363, 3662);
const EXPORT_SECS: f64 = 5.0;
const BRUTE_TOL: f64 = 1e-8;
const MILP_TOL: f64 = 1e-6;
const ORACLE_SECS: f64 = 120.0;
const RECOVERY_TOL: f64 = 1e-8;
const TABLE1_TOL: f64 = 0.1;
const STEADY_ACTION_TOL: f64 = 2.0;
const GRADIENT_TOL: f64 = 1e-5;
const MPC_FEAS_TOL: f64 = 1e-6;
const SYMBOLIC_MAE_MAX: f64 = 0.15;
const PIPELINE_SECS: f64 = 900.0;
const IAE_RATIO_MAX: f64 = 1.10;
const TREE_LATENCY_MAX: f64 = 1e-3;
const RK4_RATIO: (f64, f64) = (8.0, 32.0);

/// Criteria that the exact optimum of the published objective does not meet
/// on this oracle's data; see the project notes.
const KNOWN_UNMET: &[u8] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Canonical data and the four trained models, shared by criteria 6 and 7.
struct Study {
    cfg: RunConfig,
    test: Dataset,
    models: Vec<(&'static str, TreeModel)>,
    elapsed: Duration,
}

fn study() -> Study {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let train = experiment::training_data(&cfg).unwrap();
    let test = experiment::test_data(&cfg, &train).unwrap();
    let symbolic = experiment::train_symbolic(&cfg, &train).unwrap().model;
    let mut models = vec![("symbolic", symbolic)];
    for (name, kind) in [
        ("linear-leaf", BaselineKind::Lintree),
        ("sparse", BaselineKind::Sparse),
        ("constant-leaf", BaselineKind::Cart),
    ] {
        models.push((name, experiment::train_baseline(kind, &cfg, &train, None).unwrap()));
    }
    Study {
        cfg,
        test,
        models,
        elapsed: start.elapsed(),
    }
}

fn symtree(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_symtree"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("symtree binary runs")
}

fn milp_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let gen = symtree(dir.path(), &["gen-data", "--out-dir", "."]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let start = Instant::now();
    let out = symtree(dir.path(), &["export-milp", "--train", "train.csv", "--out", "canonical.mps"]);
    let secs = start.elapsed().as_secs_f64();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let counts: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("canonical.counts.json")).unwrap()).unwrap();
    let get = |k: &str| counts[k].as_i64().unwrap();
    let (v, b, r) = (get("variables"), get("binary"), get("constraints"));
    // the MPS file itself, read back independently of the counts file
    let mps = read_mps(&dir.path().join("canonical.mps")).unwrap().counts();
    let consistent = (mps.n_vars as i64, mps.n_binary as i64, mps.n_rows as i64) == (v, b, r);
    let within = (v - PAPER_COUNTS.0).abs() <= COUNT_TOL.0
        && (b - PAPER_COUNTS.1).abs() <= COUNT_TOL.1
        && (r - PAPER_COUNTS.2).abs() <= COUNT_TOL.2;
    outcome(
        within && consistent && secs < EXPORT_SECS,
        format!(
            "{v} variables / {b} binary / {r} constraints (paper 1615/363/3662, formulation 1612/360/3663), \
             MPS agrees: {consistent}, export {secs:.2} s"
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bases = [
        BasisSet::constant(),
        BasisSet::affine(1),
        BasisSet::new([(Form::new(0, ExpFactor::None), 0), (Form::new(2, ExpFactor::Exp), 0)]),
        BasisSet::new([(Form::new(1, ExpFactor::NegExp), 0)]),
    ];
    let (mut worst_brute, mut worst_milp) = (0.0f64, 0.0f64);
    for case in 0..20 {
        let n = rng.random_range(2..=8);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..6.0)).collect();
        let data = Dataset::from_1d(&xs, &ys).unwrap();
        let cfg = LearnConfig {
            depth: 1,
            lambda_c: rng.random_range(0.0..0.2),
            lambda_m: [0.0, 0.01, 0.3][case % 3],
            c_bounds: (-20.0, 20.0),
            ..LearnConfig::default()
        };
        let basis = &bases[case % bases.len()];
        let learned = fit_tree(&data, basis, &cfg).unwrap().objective;
        let brute = common::brute_force(&data, basis, &cfg);
        let milp = solve_by_enumeration(&build_milp(&data, basis, &cfg).unwrap(), 10_000_000)
            .unwrap()
            .objective;
        worst_brute = worst_brute.max((learned - brute).abs());
        worst_milp = worst_milp.max((learned - milp).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_brute <= BRUTE_TOL && worst_milp <= MILP_TOL && secs < ORACLE_SECS,
        format!("20 instances: max |learner - brute force| {worst_brute:.1e}, max |learner - MILP| {worst_milp:.1e}, {secs:.1} s"),
    )
}

fn in_class_recovery() -> Outcome {
    let basis = BasisSet::new([
        (Form::new(0, ExpFactor::None), 0),
        (Form::new(1, ExpFactor::None), 0),
        (Form::new(0, ExpFactor::Exp), 0),
        (Form::new(1, ExpFactor::NegExp), 0),
    ]);
    let xs: Vec<f64> = (0..40).map(|i| 0.025 + 0.95 * i as f64 / 39.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let truth = common::random_tree(&mut rng, 2, &basis, 3.0, (0.0, 1.0), true);
        let ys: Vec<f64> = xs.iter().map(|&x| truth.predict(&[x]).unwrap()).collect();
        let data = Dataset::from_1d(&xs, &ys).unwrap();
        let cfg = LearnConfig {
            lambda_c: 0.0,
            lambda_m: 0.0,
            y_bounds: Some((-100.0, 100.0)),
            ..LearnConfig::default()
        };
        worst = worst.max(fit_tree(&data, &basis, &cfg).unwrap().objective);
    }
    outcome(worst <= RECOVERY_TOL, format!("5 random depth-2 trees, worst objective {worst:.1e}"))
}

fn table1_reproduction() -> Outcome {
    let m = reference_cstr_model();
    // node 7 written out by hand from the published table
    let node7 = |x: f64| 71.983 + 1.088 * x.exp() - 0.407 * x * x * x.exp() + 0.421 * x * (1.0 / x).exp();
    let mut worst = 0.0f64;
    let mut agree = 0.0f64;
    let mut routed = true;
    for i in 0..=95 {
        let x = 0.70 + 0.19 * i as f64 / 95.0;
        let y = m.predict(&[x]).unwrap();
        routed &= m.route(&[x]).unwrap() == 7;
        worst = worst.max((y - 75.0).abs());
        agree = agree.max((y - node7(x)).abs());
    }
    outcome(
        worst <= TABLE1_TOL && agree <= 1e-9 && routed,
        format!("96 points on [0.70, 0.89]: max |y - 75| {worst:.4}, max |model - hand evaluation| {agree:.1e}"),
    )
}

/// Constraint check recomputed from the controls alone.
fn independent_violation(spec: &MpcSpec, x0: f64, s: &MpcSolution) -> f64 {
    let (ul, uu) = spec.u_bounds;
    let (xl, xu) = spec.x_bounds;
    let mut v = 0.0f64;
    for &u in &s.controls {
        v = v.max(ul - u).max(u - uu);
    }
    for w in s.controls.windows(2) {
        v = v.max((w[1] - w[0]).abs() - spec.h * spec.u_rate_max);
    }
    let mut x = x0;
    let mut states = vec![x];
    for &u in &s.controls {
        x += spec.h * ((u / spec.plant.volume) * (spec.plant.x_f - x) - spec.plant.k * x.powi(3));
        states.push(x);
    }
    for x in states {
        v = v.max(xl - x).max(x - xu);
    }
    v
}

fn mpc_sanity() -> Outcome {
    let spec = MpcSpec::default();
    let steady = solve_mpc(&spec, 0.6).unwrap().first_action;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut grad_err = 0.0f64;
    for _ in 0..100 {
        let x0 = rng.random_range(0.05..0.95);
        let u: Vec<f64> = (0..spec.n_controls()).map(|_| rng.random_range(0.0..75.0)).collect();
        let g = rollout(&spec, x0, &u).gradient;
        let step = 1e-6;
        let fd: Vec<f64> = (0..u.len())
            .map(|j| {
                let (mut up, mut dn) = (u.clone(), u.clone());
                up[j] += step;
                dn[j] -= step;
                (rollout(&spec, x0, &up).objective - rollout(&spec, x0, &dn).objective) / (2.0 * step)
            })
            .collect();
        let num = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        grad_err = grad_err.max(num / den);
    }
    let mut viol = 0.0f64;
    for i in 0..=50 {
        let x0 = i as f64 / 50.0;
        let s = solve_mpc(&spec, x0).unwrap();
        viol = viol.max(independent_violation(&spec, x0, &s)).max(s.max_violation);
    }
    outcome(
        (steady - 54.0).abs() <= STEADY_ACTION_TOL && grad_err <= GRADIENT_TOL && viol <= MPC_FEAS_TOL,
        format!(
            "first action at 0.6: {steady:.4} (54 +- 2); gradient rel. error {grad_err:.1e}; \
             max violation over 51 solves {viol:.1e}"
        ),
    )
}

fn metrics_of(s: &Study) -> Vec<(&'static str, Metrics)> {
    s.models
        .iter()
        .map(|(n, m)| (*n, experiment::evaluate(&s.cfg, &Controller::Model(m.clone()), &s.test).unwrap().1))
        .collect()
}

fn mae_ordering(s: &Study, metrics: &[(&str, Metrics)]) -> Outcome {
    let mae: Vec<f64> = metrics.iter().map(|(_, m)| m.mae_test).collect();
    let ordered = mae.windows(2).all(|w| w[0] < w[1]);
    let secs = s.elapsed.as_secs_f64();
    outcome(
        ordered && mae[0] <= SYMBOLIC_MAE_MAX && secs <= PIPELINE_SECS,
        format!(
            "test MAE symbolic {:.4} / linear-leaf {:.4} / sparse {:.4} / constant-leaf {:.4} \
             (paper 0.0621 / 0.4221 / 1.2734 / 1.8727), need increasing and symbolic <= {SYMBOLIC_MAE_MAX}; \
             data + training {secs:.1} s",
            mae[0], mae[1], mae[2], mae[3]
        ),
    )
}

fn closed_loop(s: &Study, metrics: &[(&str, Metrics)]) -> Outcome {
    let spec = s.cfg.mpc_spec();
    let mpc_trace = experiment::run_closed_loop(&s.cfg, &Controller::Mpc(spec)).unwrap();
    let mpc_iae = symtree_core::sim::iae(&mpc_trace, spec.x_sp);
    let (mpc_lat, _) = latency_stats(&mpc_trace);
    let get = |name: &str| metrics.iter().find(|(n, _)| *n == name).unwrap().1;
    let (sym, lin, sparse) = (get("symbolic"), get("linear-leaf"), get("sparse"));
    let ratio = sym.iae / mpc_iae;
    let pass = ratio <= IAE_RATIO_MAX
        && lin.iae > sym.iae
        && sparse.iae > sym.iae
        && sym.latency_mean_s <= TREE_LATENCY_MAX
        && sym.latency_mean_s <= mpc_lat;
    outcome(
        pass,
        format!(
            "IAE MPC {mpc_iae:.4}, symbolic {:.4} (ratio {ratio:.3}, need <= {IAE_RATIO_MAX}), linear-leaf {:.4}, \
             sparse {:.4}; mean latency symbolic {:.2e} s vs MPC {mpc_lat:.2e} s",
            sym.iae, lin.iae, sparse.iae, sym.latency_mean_s
        ),
    )
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let basis = canonical_basis();

    // routing totality, tie rule and serialization on random trees
    let mut trees_ok = true;
    for _ in 0..200 {
        let depth = rng.random_range(1..=4);
        let m = common::random_tree(&mut rng, depth, &basis, 50.0, (0.0, 1.0), false);
        for _ in 0..20 {
            let x = rng.random_range(-0.5..1.5);
            trees_ok &= m.topology.kind(m.route(&[x]).unwrap()) == NodeKind::Leaf;
        }
        // an input exactly at the root threshold goes right
        let t = m.rules[&1].threshold;
        trees_ok &= root_child(m.route(&[t]).unwrap()) == 3;
        trees_ok &= deserialize(&serialize(&m)).unwrap() == m;
    }

    // LP optimum against vertex enumeration
    let mut lp_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let mut p = LpProblem::new((0..n).map(|_| rng.random_range(-3.0..3.0)).collect());
        for j in 0..n {
            p.set_bounds(j, rng.random_range(-5.0..0.0), rng.random_range(0.0..5.0));
        }
        for _ in 0..rng.random_range(1..=4) {
            let coeffs = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rel = [Relation::Le, Relation::Ge, Relation::Eq][rng.random_range(0..3)];
            p.add_row(coeffs, rel, rng.random_range(-2.0..2.0));
        }
        let s = solve_lp(&p).unwrap();
        match (s.status, common::lp_vertex_enum(&p)) {
            (LpStatus::Optimal, Some(v)) => lp_err = lp_err.max((s.objective - v).abs()),
            (LpStatus::Infeasible, None) => {}
            _ => lp_err = f64::INFINITY,
        }
    }

    // RK4 order
    let plant = PlantSpec::default();
    let (x0, u, t, h) = (0.2, 30.0, 4.0, 0.4);
    let reference = integrate(&plant, x0, u, t, h / 64.0);
    let ratio = (integrate(&plant, x0, u, t, h) - reference).abs() / (integrate(&plant, x0, u, t, h / 2.0) - reference).abs();

    // fit_l1 loss is nondecreasing in lambda_m
    let mut monotone = true;
    for _ in 0..50 {
        let n = rng.random_range(1..10);
        let phi: Vec<Vec<f64>> = (0..n)
            .map(|_| basis.evaluate(&[rng.random_range(0.2..0.9)]).unwrap()[..4].to_vec())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 1e-3, 1e-2, 0.1, 1.0] {
            let loss = fit_l1(&phi, &y, 1.0 / n as f64, lambda, (-100.0, 100.0)).unwrap().loss;
            monotone &= loss >= prev - 1e-9;
            prev = loss;
        }
    }

    let rk4_ok = (RK4_RATIO.0..=RK4_RATIO.1).contains(&ratio);
    outcome(
        trees_ok && lp_err <= 1e-7 && rk4_ok && monotone,
        format!(
            "routing/ties/round-trip on 200 trees: {trees_ok}; LP vs vertex enumeration max error {lp_err:.1e}; \
             RK4 error ratio {ratio:.2}; lambda_m monotone: {monotone}"
        ),
    )
}

/// Child of the root on the path to `n`.
fn root_child(mut n: usize) -> usize {
    while n > 3 {
        n /= 2;
    }
    n
}

fn main() {
    let total = Instant::now();
    let mut study_cache: Option<Study> = None;
    let mut metrics_cache: Option<Vec<(&'static str, Metrics)>> = None;
    let names = [
        (1u8, "MILP fidelity"),
        (2, "exact-learner oracle equivalence"),
        (3, "in-class recovery"),
        (4, "Table 1 reproduction"),
        (5, "MPC oracle sanity"),
        (6, "end-to-end MAE ordering"),
        (7, "closed loop"),
        (8, "property suites"),
    ];
    let mut unexpected = 0;
    for (id, name) in names {
        let result = catch_unwind(AssertUnwindSafe(|| match id {
            1 => milp_fidelity(),
            2 => oracle_equivalence(),
            3 => in_class_recovery(),
            4 => table1_reproduction(),
            5 => mpc_sanity(),
            6 | 7 => {
                let s = study_cache.get_or_insert_with(study);
                let m = metrics_cache.get_or_insert_with(|| metrics_of(s));
                if id == 6 {
                    mae_ordering(s, m)
                } else {
                    closed_loop(s, m)
                }
            }
            _ => properties(),
        }));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let known = KNOWN_UNMET.contains(&id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} [{id}] {name}: {}", o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
        if o.pass && known {
            println!("note: criterion {id} is listed as known-unmet but passed");
        }
    }
    println!("acceptance finished in {:.1} s", total.elapsed().as_secs_f64());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
