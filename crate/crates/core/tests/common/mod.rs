#![allow(dead_code)]

use switchqcd::environments::{gen_random_mdp, RandomMdpSpec};
use switchqcd::mdp::ModePairMdp;
use switchqcd::pipeline::{analyze_modes, ModeAnalysis};

/// Random-MDP instances (default shape) whose mode policies differ, so that
/// `λ` exists.
pub fn informative_instances(count: usize, rho: f64) -> Vec<(u64, ModePairMdp, ModeAnalysis)> {
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

/// Plain row-vector times matrix.
pub fn vec_mat(mu: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let n = m[0].len();
    (0..n).map(|j| mu.iter().zip(m).map(|(w, row)| w * row[j]).sum()).collect()
}
