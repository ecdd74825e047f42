mod common;

use switchqcd::qcd::{
    belief_update, mixture_transition, BeliefDynamics, BeliefGrid, BeliefValueTable, FixedPointOptions, StoppingProblem, SwitchRule,
};

fn toy() -> BeliefDynamics {
    BeliefDynamics::new(vec![vec![0.85, 0.15], vec![0.35, 0.65]], vec![vec![0.3, 0.7], vec![0.6, 0.4]], 0.05).unwrap()
}

fn random_problem(rho: f64, grid: usize) -> StoppingProblem {
    let (_, mdp, analysis) = common::informative_instances(1, rho).remove(0);
    let dynamics = BeliefDynamics::from_policy(&mdp, &analysis.pre.policy).unwrap();
    StoppingProblem::new(dynamics, analysis.lambda(rho).unwrap(), BeliefGrid::uniform(grid).unwrap()).unwrap()
}

fn assert_in_class(table: &BeliefValueTable, lambda: f64) {
    for (i, &p) in table.grid.points().iter().enumerate() {
        for x in 0..table.n_states() {
            let v = table.get(i, x);
            assert!(v >= 0.0 && v <= lambda * (1.0 - p) + 1e-12, "({p}, {x}) = {v}");
        }
    }
}

fn assert_concave(table: &BeliefValueTable) {
    for x in 0..table.n_states() {
        for i in 1..table.grid.len() - 1 {
            let (a, b, c) = (table.get(i - 1, x), table.get(i, x), table.get(i + 1, x));
            assert!(a + c <= 2.0 * b + 1e-9, "state {x}, index {i}");
        }
    }
}

#[test]
fn one_step_from_stopping_cost_is_affine() {
    let problem = StoppingProblem::new(toy(), 7.0, BeliefGrid::uniform(51).unwrap()).unwrap();
    let cont = problem.continuation(&problem.stopping_cost());
    let once = problem.apply(&problem.stopping_cost());
    for (i, &p) in problem.grid().points().iter().enumerate() {
        let affine = p + 7.0 * 0.95 * (1.0 - p);
        for x in 0..2 {
            assert!((cont.get(i, x) - affine).abs() <= 1e-12);
            assert!((once.get(i, x) - affine.min(7.0 * (1.0 - p))).abs() <= 1e-12);
        }
    }
    assert!(problem.finite_horizon(1).sup_distance(&once) <= 1e-12);
}

/// Direct transcription of the Bellman operator on a 2-state instance:
/// explicit Bayes rule, explicit bracketing, no precomputation.
fn hand_rolled(v: &[[f64; 2]], pre: [[f64; 2]; 2], post: [[f64; 2]; 2], rho: f64, lambda: f64) -> Vec<[f64; 2]> {
    let g = v.len();
    let h = 1.0 / (g - 1) as f64;
    let lookup = |q: f64, y: usize| {
        let pos = q / h;
        let mut lo = pos.floor() as usize;
        if lo >= g - 1 {
            lo = g - 2;
        }
        let w = pos - lo as f64;
        (1.0 - w) * v[lo][y] + w * v[lo + 1][y]
    };
    (0..g)
        .map(|i| {
            let p = i as f64 / (g - 1) as f64;
            let mut out = [0.0; 2];
            for x in 0..2 {
                let pb = p + rho * (1.0 - p);
                let mut a = 0.0;
                for y in 0..2 {
                    let m = (1.0 - pb) * pre[x][y] + pb * post[x][y];
                    if m > 0.0 {
                        a += m * lookup(pb * post[x][y] / m, y);
                    }
                }
                out[x] = (lambda * (1.0 - p)).min(p + a);
            }
            out
        })
        .collect()
}

#[test]
fn operator_matches_hand_rolled_transcription() {
    let pre = [[0.85, 0.15], [0.35, 0.65]];
    let post = [[0.3, 0.7], [0.6, 0.4]];
    let problem = StoppingProblem::new(toy(), 6.0, BeliefGrid::uniform(11).unwrap()).unwrap();
    let mut table = problem.stopping_cost();
    let mut oracle: Vec<[f64; 2]> = (0..11).map(|i| [table.get(i, 0), table.get(i, 1)]).collect();
    for _ in 0..30 {
        table = problem.apply(&table);
        oracle = hand_rolled(&oracle, pre, post, 0.05, 6.0);
        for (i, row) in oracle.iter().enumerate() {
            for x in 0..2 {
                assert!((table.get(i, x) - row[x]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn uninformative_observations_collapse_the_state() {
    let rows = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.3, 0.3, 0.4]];
    let rho = 0.03;
    let lambda = 40.0;
    let dynamics = BeliefDynamics::new(rows.clone(), rows, rho).unwrap();
    let grid = BeliefGrid::uniform(201).unwrap();
    let problem = StoppingProblem::new(dynamics, lambda, grid.clone()).unwrap();
    let opts = FixedPointOptions::default();
    let solution = problem.solve(opts).unwrap();

    // Scalar recursion v(p) = min{λ(1-p), p + v(p + ρ(1-p))} on the same grid.
    let pts = grid.points();
    let mut v: Vec<f64> = pts.iter().map(|p| lambda * (1.0 - p)).collect();
    loop {
        let next: Vec<f64> = pts.iter().map(|&p| (lambda * (1.0 - p)).min(p + grid.interpolate(p + rho * (1.0 - p), |i| v[i]))).collect();
        let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change <= opts.tol {
            break;
        }
    }
    for (i, vi) in v.iter().enumerate() {
        for x in 0..3 {
            assert!((solution.table.get(i, x) - vi).abs() < 10.0 * opts.tol, "index {i}, state {x}");
        }
    }
    let rule = problem.extract_thresholds(&solution.table).unwrap();
    assert!(rule.threshold.iter().all(|&t| t == rule.threshold[0]));
    assert!(rule.threshold[0] > 0.0);
}

#[test]
fn expected_posterior_is_propagated_prior() {
    let (_, mdp, analysis) = common::informative_instances(1, 0.01).remove(0);
    let dynamics = BeliefDynamics::from_policy(&mdp, &analysis.pre.policy).unwrap();
    for k in 0..100 {
        let p = k as f64 / 99.0;
        for x in 0..dynamics.n_states() {
            let m = mixture_transition(&dynamics, x, p);
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let e: f64 = (0..m.len()).filter(|&y| m[y] > 0.0).map(|y| m[y] * belief_update(&dynamics, x, y, p).unwrap()).sum();
            assert!((e - (p + 0.01 * (1.0 - p))).abs() <= 1e-12);
        }
    }
}

#[test]
fn belief_update_is_monotone_in_prior() {
    let d = toy();
    for x in 0..2 {
        for y in 0..2 {
            let vals: Vec<f64> = (0..=1000).map(|k| belief_update(&d, x, y, k as f64 / 1000.0).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

#[test]
fn iterates_decrease_and_stay_concave_in_class() {
    let problem = random_problem(0.01, 200);
    let mut table = problem.stopping_cost();
    for _ in 0..200 {
        let next = problem.apply(&table);
        assert!(next.values().iter().zip(table.values()).all(|(a, b)| a <= b));
        assert_in_class(&next, problem.lambda());
        assert_concave(&next);
        table = next;
    }
}

#[test]
fn fixed_point_properties() {
    let problem = random_problem(0.01, 1000);
    let opts = FixedPointOptions::default();
    let solution = problem.solve(opts).unwrap();
    assert!(problem.apply(&solution.table).sup_distance(&solution.table) <= opts.tol);
    assert_in_class(&solution.table, problem.lambda());
    assert_concave(&solution.table);
    for x in 0..problem.n_states() {
        assert_eq!(solution.table.get(999, x), 0.0);
    }
    let from_zero = problem.iterate_from(BeliefValueTable::zeros(problem.grid(), problem.n_states()), opts).unwrap();
    assert!(from_zero.table.sup_distance(&solution.table) <= 10.0 * opts.tol);
}

#[test]
fn fixed_point_matches_long_finite_horizon() {
    let problem = random_problem(0.01, 1000);
    let solution = problem.solve(FixedPointOptions::default()).unwrap();
    let dp = problem.finite_horizon(5000);
    assert!(dp.sup_distance(&solution.table) <= 1e-5);
}

#[test]
fn longer_horizons_never_cost_more() {
    let problem = random_problem(0.01, 100);
    let mut previous = problem.finite_horizon(0);
    assert_eq!(previous, problem.stopping_cost());
    for t in [1, 2, 5, 20, 100, 400] {
        let table = problem.finite_horizon(t);
        assert!(table.values().iter().zip(previous.values()).all(|(a, b)| a <= b), "T = {t}");
        previous = table;
    }
}

#[test]
fn extracted_rule_is_certified_optimal() {
    let problem = random_problem(0.01, 300);
    let opts = FixedPointOptions::default();
    let solution = problem.solve(opts).unwrap();
    let rule = problem.extract_thresholds(&solution.table).unwrap();
    let slack = problem.grid_slack();
    let own = problem.evaluate_rule(&rule, opts).unwrap();
    assert!(own.sup_distance(&solution.table) <= 2.0 * slack);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    use rand::{Rng, SeedableRng};
    for _ in 0..20 {
        let perturbed: Vec<f64> = rule.threshold.iter().map(|t| (t + rng.random_range(-0.2..0.05)).clamp(0.0, 1.0)).collect();
        let v = problem.evaluate_rule(&SwitchRule::new(perturbed).unwrap(), opts).unwrap();
        assert!(v.values().iter().zip(solution.table.values()).all(|(a, b)| *a >= b - slack));
    }
}

#[test]
fn thresholds_fall_as_change_rate_rises() {
    let (_, mdp, analysis) = common::informative_instances(1, 0.01).remove(0);
    let mut previous: Option<Vec<f64>> = None;
    for rho in [0.0028, 0.0036, 0.0046, 0.0060, 0.0078, 0.01] {
        let opts = switchqcd::pipeline::SolveOptions { grid_size: 300, ..Default::default() };
        let solved = analysis.solve_switching(rho, &opts).unwrap();
        let _ = &mdp;
        if let Some(prev) = &previous {
            assert!(solved.rule.threshold.iter().zip(prev).all(|(a, b)| a <= b), "rho {rho}");
        }
        previous = Some(solved.rule.threshold);
    }
}
