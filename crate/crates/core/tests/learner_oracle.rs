mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtree_core::basis::{BasisSet, ExpFactor, Form};
use symtree_core::data::Dataset;
use symtree_core::learner::{candidate_thresholds, fit_tree, objective_of, LearnConfig};

fn small_basis() -> BasisSet {
    BasisSet::new([
        (Form::new(0, ExpFactor::None), 0),
        (Form::new(1, ExpFactor::None), 0),
        (Form::new(0, ExpFactor::Exp), 0),
    ])
}

#[test]
fn learner_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..12 {
        let n = 5;
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        xs.sort_by(f64::total_cmp);
        let ys: Vec<f64> = xs.iter().map(|_| rng.random_range(-3.0..6.0)).collect();
        let data = Dataset::from_1d(&xs, &ys).unwrap();
        let cfg = LearnConfig {
            depth: 1 + case % 2,
            lambda_c: [0.0, 0.05, 0.3][case % 3],
            lambda_m: 0.01,
            c_bounds: (-20.0, 20.0),
            y_bounds: if case % 4 == 3 { Some((-1.0, 4.0)) } else { None },
            ..LearnConfig::default()
        };
        let basis = small_basis();
        let got = fit_tree(&data, &basis, &cfg).unwrap();
        let want = common::brute_force(&data, &basis, &cfg);
        assert!(
            (got.objective - want).abs() <= 1e-6,
            "case {case}: learner {} vs exhaustive {want}",
            got.objective
        );
    }
}

#[test]
fn deeper_trees_never_score_worse() {
    let xs: Vec<f64> = (0..14).map(|i| 0.1 + 0.06 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| if *x < 0.5 { 10.0 * x } else { 3.0 - x * x }).collect();
    let data = Dataset::from_1d(&xs, &ys).unwrap();
    let mut prev = f64::INFINITY;
    for depth in 1..=3 {
        let cfg = LearnConfig { depth, ..LearnConfig::default() };
        let r = fit_tree(&data, &small_basis(), &cfg).unwrap();
        assert!(r.objective <= prev + 1e-9, "depth {depth}: {} > {prev}", r.objective);
        prev = r.objective;
    }
}

#[test]
fn heavy_complexity_penalty_keeps_a_single_split() {
    let xs: Vec<f64> = (0..10).map(|i| 0.1 + 0.08 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (7.0 * x).sin()).collect();
    let data = Dataset::from_1d(&xs, &ys).unwrap();
    let cfg = LearnConfig { depth: 3, lambda_c: 100.0, ..LearnConfig::default() };
    let r = fit_tree(&data, &small_basis(), &cfg).unwrap();
    assert_eq!(r.model.complexity(), 1);
    let (obj, _) = objective_of(&r.model, &data, &cfg).unwrap();
    assert!((obj - r.objective).abs() < 1e-12);
}

#[test]
fn in_class_tree_is_recovered() {
    // piecewise law inside the hypothesis class: 2 + x left of 0.5, exp(x) right
    let xs: Vec<f64> = (0..16).map(|i| 0.1 + 0.05 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { 2.0 + x } else { x.exp() }).collect();
    let data = Dataset::from_1d(&xs, &ys).unwrap();
    // the output bounds hold at every sample, so they must admit 2 + 0.85
    let cfg = LearnConfig {
        depth: 1,
        lambda_c: 0.0,
        lambda_m: 1e-6,
        y_bounds: Some((-10.0, 10.0)),
        ..LearnConfig::default()
    };
    let r = fit_tree(&data, &small_basis(), &cfg).unwrap();
    assert!(r.breakdown.l_acc < 1e-9);
    let t = r.model.rules[&1].threshold;
    assert!(t > 0.45 && t < 0.5, "threshold {t}");
    let l = &r.model.leaves[&2].coeffs;
    let rt = &r.model.leaves[&3].coeffs;
    assert!((l[0] - 2.0).abs() < 1e-6 && (l[1] - 1.0).abs() < 1e-6 && l[2].abs() < 1e-6);
    assert!(rt[0].abs() < 1e-6 && rt[1].abs() < 1e-6 && (rt[2] - 1.0).abs() < 1e-6);
}

#[test]
fn midpoints_realize_every_threshold_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-4;
    for _ in 0..20 {
        let n = rng.random_range(2..9);
        // coarse grid so duplicates occur
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.1).collect();
        let data = Dataset::from_1d(&xs, &vec![0.0; n]).unwrap();
        let part = |b: f64| -> Vec<bool> { xs.iter().map(|&x| x <= b - eps).collect() };
        let mids: std::collections::HashSet<Vec<bool>> = candidate_thresholds(&data, 0)
            .unwrap()
            .into_iter()
            .map(|t| xs.iter().map(|&x| x < t).collect())
            .collect();
        // sweep continuous thresholds finely, including values near the samples
        for j in -100..=800 {
            let p = part(j as f64 * 1e-3);
            let trivial = p.iter().all(|&v| v) || p.iter().all(|&v| !v);
            assert!(trivial || mids.contains(&p), "partition {p:?} missing for {xs:?}");
        }
    }
}

#[test]
fn random_trees_never_beat_the_optimum() {
    use symtree_core::tree::{Bounds, TreeModel};
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let xs: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 4.0 * x * x - 1.0).collect();
    let data = Dataset::from_1d(&xs, &ys).unwrap();
    let cfg = LearnConfig { depth: 2, ..LearnConfig::default() };
    let basis = small_basis();
    let best = fit_tree(&data, &basis, &cfg).unwrap().objective;
    let (y_lb, y_ub) = cfg.y_bounds_for(&data);
    let mut checked = 0;
    while checked < 300 {
        let coeffs = |rng: &mut ChaCha8Rng| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let mut b = TreeModel::builder(1, basis.clone(), Bounds { c_lb: -100.0, c_ub: 100.0, y_lb, y_ub })
            .branch(1, 0, rng.random_range(0.0..1.0));
        b = b.leaf(2, coeffs(&mut rng)).leaf(3, coeffs(&mut rng));
        let m = b.build();
        // only trees whose leaf expressions respect the output bounds everywhere are feasible
        let feasible = m.leaves.values().all(|l| {
            xs.iter().all(|&x| {
                let v = l.eval_features(&basis.evaluate(&[x]).unwrap());
                v >= y_lb && v <= y_ub
            })
        });
        if !feasible {
            continue;
        }
        let (obj, _) = objective_of(&m, &data, &cfg).unwrap();
        assert!(obj >= best - 1e-8, "{obj} < {best}");
        checked += 1;
    }
}
