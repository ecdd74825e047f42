//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always appear in the test
//! output. The process fails if any criterion fails, except a criterion in
//! [`KNOWN_RED`] whose failure matches its recorded explanation.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchqcd::chain::verify_mixing_bound;
use switchqcd::environments::{build_inventory, gen_random_mdp, CostReading, InventorySpec, RandomMdpSpec};
use switchqcd::mdp::{Mode, ModePairMdp};
use switchqcd::pipeline::{analyze_modes, ModeAnalysis, SolveOptions};
use switchqcd::qcd::{BeliefDynamics, BeliefGrid, BeliefValueTable, FixedPointOptions, StoppingProblem, SwitchRule};
use switchqcd::sim::{estimate_approx_regret_empirical, run_experiment, SimConfig};
use switchqcd_cli::{cmd_figure1, cmd_simulate, ExperimentConfig, RunContext};

const SWEEP_RHOS: [f64; 6] = [0.01, 0.0078, 0.0060, 0.0046, 0.0036, 0.0028];

/// Criteria expected to fail, with the check that the failure is the
/// documented one rather than a regression.
const KNOWN_RED: [usize; 1] = [3];

struct Outcome {
    pass: bool,
    detail: String,
    /// For known-red criteria: whether the failure has the documented cause.
    explained: bool,
}

fn pass_if(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, explained: false }
}

fn instances(count: usize, rho: f64) -> Vec<(u64, ModePairMdp, ModeAnalysis)> {
    (0u64..)
        .filter_map(|seed| {
            let mdp = gen_random_mdp(&RandomMdpSpec::new(seed, rho)).ok()?;
            let analysis = analyze_modes(&mdp, &Default::default()).ok()?;
            analysis.lambda(rho).ok()?;
            Some((seed, mdp, analysis))
        })
        .take(count)
        .collect()
}

fn stopping_problem(mdp: &ModePairMdp, analysis: &ModeAnalysis, rho: f64, grid: usize) -> StoppingProblem {
    let mdp = mdp.with_change_rate(rho).unwrap();
    let dynamics = BeliefDynamics::from_policy(&mdp, &analysis.pre.policy).unwrap();
    StoppingProblem::new(dynamics, analysis.lambda(rho).unwrap(), BeliefGrid::uniform(grid).unwrap()).unwrap()
}

fn c1_one_step_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, mdp, analysis) in instances(10, 0.01) {
        let problem = stopping_problem(&mdp, &analysis, 0.01, 50);
        let cont = problem.continuation(&problem.stopping_cost());
        let lambda = problem.lambda();
        for (i, &p) in problem.grid().points().iter().enumerate() {
            for x in 0..problem.n_states() {
                worst = worst.max((cont.get(i, x) - (p + lambda * 0.99 * (1.0 - p))).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(worst <= 1e-12 && elapsed < Duration::from_secs(1), format!("max error {worst:.3e}, {elapsed:.2?}"))
}

fn c2_expected_posterior() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, mdp, analysis) in instances(10, 0.01) {
        let d = BeliefDynamics::from_policy(&mdp, &analysis.pre.policy).unwrap();
        for k in 0..100 {
            let p = k as f64 / 99.0;
            for x in 0..d.n_states() {
                let m = d.mixture_transition(x, p);
                let e: f64 = (0..m.len()).filter(|&y| m[y] > 0.0).map(|y| m[y] * d.belief_update(x, y, p).unwrap()).sum();
                worst = worst.max((e - d.propagated(p)).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(worst <= 1e-12 && elapsed < Duration::from_secs(1), format!("max error {worst:.3e} over 10 instances, {elapsed:.2?}"))
}

struct RandomFixture {
    problem: StoppingProblem,
    table: BeliefValueTable,
    tol: f64,
}

fn c3_oracle_equivalence(f: &RandomFixture) -> Outcome {
    let start = Instant::now();
    let horizon = (12.0f64 / 0.01).ceil() as usize;
    let gap = f.problem.finite_horizon(horizon).sup_distance(&f.table);
    let long_gap = f.problem.finite_horizon(5000).sup_distance(&f.table);
    // A forced stop at T costs about λ·P{Γ > T} more than the stationary rule.
    let predicted = f.problem.lambda() * 0.99f64.powi(horizon as i32);
    Outcome {
        pass: gap <= 1e-5,
        detail: format!(
            "T={horizon}: gap {gap:.3e} (λ(1-ρ)^T = {predicted:.3e}); T=5000: gap {long_gap:.3e}; {:.2?}",
            start.elapsed()
        ),
        explained: long_gap <= 1e-5 && gap <= 2.0 * predicted,
    }
}

fn c4_monotone_iteration(f: &RandomFixture) -> Outcome {
    let mut table = f.problem.stopping_cost();
    let mut violations = 0usize;
    for _ in 0..=200 {
        let next = f.problem.apply(&table);
        violations += next.values().iter().zip(table.values()).filter(|(a, b)| a > b).count();
        table = next;
    }
    pass_if(violations == 0, format!("{violations} violations over k ≤ 200"))
}

fn c5_concavity_membership(f: &RandomFixture) -> Outcome {
    let (t, lambda) = (&f.table, f.problem.lambda());
    let g = t.grid.len();
    let mut worst_concavity: f64 = f64::NEG_INFINITY;
    let mut class_ok = true;
    let mut top_zero = true;
    for x in 0..t.n_states() {
        for i in 1..g - 1 {
            worst_concavity = worst_concavity.max(t.get(i - 1, x) + t.get(i + 1, x) - 2.0 * t.get(i, x));
        }
        for (i, &p) in t.grid.points().iter().enumerate() {
            let v = t.get(i, x);
            class_ok &= v >= 0.0 && v <= lambda * (1.0 - p) + 1e-12;
        }
        top_zero &= t.get(g - 1, x) == 0.0;
    }
    pass_if(
        worst_concavity <= 1e-9 && class_ok && top_zero,
        format!("max second difference {worst_concavity:.3e}, 0 ≤ V ≤ λ(1-p): {class_ok}, V(1,·)=0: {top_zero}"),
    )
}

fn c6_uniqueness(f: &RandomFixture) -> Outcome {
    let opts = FixedPointOptions { tol: f.tol, ..Default::default() };
    let zero = BeliefValueTable::zeros(f.problem.grid(), f.problem.n_states());
    let from_zero = f.problem.iterate_from(zero, opts).unwrap();
    let d = from_zero.table.sup_distance(&f.table);
    pass_if(d <= 10.0 * f.tol, format!("sup distance {d:.3e} (10·tol = {:.1e})", 10.0 * f.tol))
}

fn c7_mixing_bound() -> Outcome {
    let start = Instant::now();
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    let mut checked = 0usize;
    for seed in 0..10 {
        let mdp = gen_random_mdp(&RandomMdpSpec::new(seed, 0.01)).unwrap();
        let analysis = analyze_modes(&mdp, &Default::default()).unwrap();
        for i in Mode::BOTH {
            for j in Mode::BOTH {
                for gamma in [0.9, 0.999] {
                    checked += 1;
                    match verify_mixing_bound(analysis.chains.get(i, j), gamma, 200) {
                        Ok(r) => min_slack = min_slack.min(r.min_slack.min(r.min_slack_intermediate)),
                        Err(_) => violations += 1,
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(
        violations == 0 && elapsed < Duration::from_secs(10),
        format!("{violations} violations in {checked} chain/γ pairs, min slack {min_slack:.3e}, {elapsed:.2?}"),
    )
}

fn c8_inventory_lambda() -> Outcome {
    let rows = [(10, 100.0, 19.39), (10, 200.0, 8.06), (10, 300.0, 7.10), (15, 100.0, 15.49), (15, 200.0, 6.97), (15, 300.0, 5.33)];
    let mut ok_by_reading = Vec::new();
    let mut detail = Vec::new();
    for reading in [CostReading::PerUnitStocked, CostReading::PerUnitOrdered] {
        let mut worst: f64 = 0.0;
        for (n, d, target) in rows {
            let model = build_inventory(&InventorySpec { cost_reading: reading, ..InventorySpec::new(n, d) }).unwrap();
            let lambda = analyze_modes(&model.mdp, &Default::default()).and_then(|a| a.lambda(0.01));
            worst = worst.max(lambda.map_or(f64::INFINITY, |l| (l - target).abs() / target));
        }
        ok_by_reading.push(worst <= 0.10);
        detail.push(format!("{reading:?}: max rel. error {:.2}%", 100.0 * worst));
    }
    pass_if(ok_by_reading.iter().any(|&b| b), detail.join("; "))
}

fn random_setup(rho: f64, grid: usize) -> (ModeAnalysis, switchqcd::pipeline::SolvedSwitching) {
    let (_, _, analysis) = instances(1, rho).remove(0);
    let solved = analysis.solve_switching(rho, &SolveOptions { grid_size: grid, ..Default::default() }).unwrap();
    (analysis, solved)
}

fn c9_monte_carlo_vs_dp() -> Outcome {
    let (analysis, solved) = random_setup(0.01, 1000);
    let setup = analysis.setup(&solved).unwrap();
    let report = run_experiment(&setup, &SimConfig { n_episodes: 6000, horizon: 3000, master_seed: 2024, workers: 0 }).unwrap();
    let slack = 2.0 * solved.problem.grid_slack();
    match estimate_approx_regret_empirical(&report, solved.lambda, solved.value_at_zero(), slack) {
        Ok(check) => pass_if(
            check.consistent,
            format!(
                "empirical {:.4} ± {:.4}, E[V(0,X0)] {:.4}, allowed {:.4}",
                check.empirical.mean, check.empirical.stderr, check.dp_value, check.tolerance
            ),
        ),
        Err(e) => pass_if(false, e.to_string()),
    }
}

fn c10_optimality_certification(f: &RandomFixture) -> Outcome {
    let rule = f.problem.extract_thresholds(&f.table).unwrap();
    let slack = 2.0 * f.problem.grid_slack();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0usize;
    let mut worst: f64 = f64::INFINITY;
    for _ in 0..20 {
        let perturbed: Vec<f64> = rule.threshold.iter().map(|t| (t + rng.random_range(-0.3..0.05)).clamp(0.0, 1.0)).collect();
        let v = f.problem.evaluate_rule(&SwitchRule::new(perturbed).unwrap(), FixedPointOptions::default()).unwrap();
        for (a, b) in v.values().iter().zip(f.table.values()) {
            worst = worst.min(a - b);
            if *a < b - slack {
                violations += 1;
            }
        }
    }
    pass_if(violations == 0, format!("{violations} violations, min V_rule - V {worst:.3e} (allowed -{slack:.3e})"))
}

fn c11_cost_trend() -> Outcome {
    let start = Instant::now();
    let pool = instances(5, 0.01);
    let mut j_mo = Vec::new();
    let mut j_cd = Vec::new();
    for &rho in &SWEEP_RHOS {
        let (mut mo, mut cd) = (0.0, 0.0);
        for (seed, _, analysis) in &pool {
            let solved = analysis.solve_switching(rho, &SolveOptions::default()).unwrap();
            let setup = analysis.setup(&solved).unwrap();
            let horizon = (2.0 / rho).ceil() as u64;
            let r = run_experiment(&setup, &SimConfig { n_episodes: 6000, horizon, master_seed: 1000 + seed, workers: 0 }).unwrap();
            mo += r.cost_mo.mean / pool.len() as f64;
            cd += r.cost_cd.mean / pool.len() as f64;
        }
        j_mo.push(mo);
        j_cd.push(cd);
    }
    let ratio_ok = j_cd.iter().zip(&j_mo).all(|(c, m)| *c <= 1.05 * m);
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let worst_ratio = j_cd.iter().zip(&j_mo).map(|(c, m)| c / m).fold(0.0, f64::max);
    pass_if(
        ratio_ok && increasing(&j_mo) && increasing(&j_cd),
        format!(
            "J_MO {:?}, J_CD {:?}, max J_CD/J_MO {worst_ratio:.4}, {:.1?}",
            j_mo.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            j_cd.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            start.elapsed()
        ),
    )
}

fn c12_threshold_trends() -> Outcome {
    let (_, _, analysis) = instances(1, 0.01).remove(0);
    // Increasing ρ.
    let rhos: Vec<f64> = SWEEP_RHOS.iter().rev().copied().collect();
    let mut thresholds: Vec<Vec<f64>> = Vec::new();
    let mut pfa = Vec::new();
    for &rho in &rhos {
        let solved = analysis.solve_switching(rho, &SolveOptions::default()).unwrap();
        let setup = analysis.setup(&solved).unwrap();
        // Long enough that untriggered episodes are negligible.
        let horizon = (12.0 / rho).ceil() as u64;
        let r = run_experiment(&setup, &SimConfig { n_episodes: 6000, horizon, master_seed: 77, workers: 0 }).unwrap();
        thresholds.push(solved.rule.threshold);
        pfa.push(r.false_alarm);
    }
    let thresholds_ok = thresholds.windows(2).all(|w| w[1].iter().zip(&w[0]).all(|(a, b)| a <= b));
    let pfa_ok = pfa.windows(2).all(|w| w[1].mean >= w[0].mean - 3.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt());
    pass_if(
        thresholds_ok && pfa_ok,
        format!(
            "thresholds nonincreasing: {thresholds_ok}; PFA by increasing ρ {:?}",
            pfa.iter().map(|e| (e.mean * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c13_determinism() -> Outcome {
    let text = r#"{"environment": {"kind": "random-mdp", "seed": 1, "change_rate": 0.01},
        "rho_sweep": [0.01, 0.006], "n_episodes": 1500, "grid_size": 300, "seed": 99, "episode_csv": true}"#;
    let config = ExperimentConfig::from_json(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: usize| {
        let out = dir.path().join(name);
        let ctx = RunContext::new(config.clone(), None, Some(out.clone()), workers).unwrap();
        cmd_simulate(&ctx).unwrap();
        cmd_figure1(&ctx).unwrap();
        read_outputs(&out)
    };
    let one = run("w1", 1);
    let eight = run("w8", 8);
    let again = run("w1-again", 1);
    let identical = one == eight && one == again;
    pass_if(identical, format!("{} files compared byte for byte (1 vs 8 workers, and a rerun)", one.len()))
}

fn c14_coupling() -> Outcome {
    let (analysis, solved) = random_setup(0.01, 1000);
    let setup = analysis.setup(&solved).unwrap();
    let report = run_experiment(&setup, &SimConfig { n_episodes: 6000, horizon: 200, master_seed: 5, workers: 0 }).unwrap();
    let eligible: Vec<_> = report.episodes.iter().filter(|e| e.switch_time.min(e.change_point) >= report.horizon).collect();
    let mismatched = eligible.iter().filter(|e| e.discounted_cost_cd.to_bits() != e.discounted_cost_mo.to_bits()).count();
    pass_if(mismatched == 0 && !eligible.is_empty(), format!("{} eligible episodes, {mismatched} mismatches", eligible.len()))
}

fn main() {
    let start = Instant::now();
    let (_, mdp, analysis) = instances(1, 0.01).remove(0);
    let problem = stopping_problem(&mdp, &analysis, 0.01, 1000);
    let tol = FixedPointOptions::default().tol;
    let table = problem.solve(FixedPointOptions::default()).unwrap().table;
    let fixture = RandomFixture { problem, table, tol };

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "analytic one-step identity", Box::new(c1_one_step_identity)),
        (2, "expected-posterior identity", Box::new(c2_expected_posterior)),
        (3, "fixed point vs finite-horizon DP (T = 12/rho)", Box::new(|| c3_oracle_equivalence(&fixture))),
        (4, "monotone iteration from psi", Box::new(|| c4_monotone_iteration(&fixture))),
        (5, "concavity and class membership", Box::new(|| c5_concavity_membership(&fixture))),
        (6, "uniqueness probe", Box::new(|| c6_uniqueness(&fixture))),
        (7, "cost-to-go mixing bound", Box::new(c7_mixing_bound)),
        (8, "inventory lambda reproduction", Box::new(c8_inventory_lambda)),
        (9, "Monte Carlo vs DP value", Box::new(c9_monte_carlo_vs_dp)),
        (10, "optimality certification", Box::new(|| c10_optimality_certification(&fixture))),
        (11, "random-MDP cost trend", Box::new(c11_cost_trend)),
        (12, "threshold and PFA trends", Box::new(c12_threshold_trends)),
        (13, "determinism", Box::new(c13_determinism)),
        (14, "coupling exactness", Box::new(c14_coupling)),
    ];

    let mut passed = 0;
    let mut unexpected = Vec::new();
    for (id, name, check) in &criteria {
        let outcome = check();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("acceptance {id:>2} {status} {name}: {}", outcome.detail);
        if outcome.pass {
            passed += 1;
        } else if !(KNOWN_RED.contains(id) && outcome.explained) {
            unexpected.push(*id);
        }
    }
    println!("acceptance summary: {passed}/{} pass, {:.1?}", criteria.len(), start.elapsed());
    if !unexpected.is_empty() {
        println!("acceptance unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
