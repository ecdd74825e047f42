//! The end-to-end solve: mode policies, induced chains and `λ`, then the
//! stopping problem and its thresholds. Errors carry the stage they came
//! from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{stationary_distribution, StationaryDistribution};
use crate::error::Error;
use crate::mdp::{value_iteration, Mode, ModePairMdp, ValueIterationOptions, ValueIterationOutcome};
use crate::qcd::{BeliefDynamics, BeliefGrid, FixedPointOptions, FixedPointSolution, StoppingProblem, SwitchRule};
use crate::regret::{compute_lambda, InducedChains, LambdaInputs};
use crate::sim::SwitchingSetup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Environment,
    PolicySynthesis,
    ChainAnalysis,
    Lambda,
    FixedPoint,
    Thresholds,
    Simulation,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Environment => "environment",
            Stage::PolicySynthesis => "policy synthesis",
            Stage::ChainAnalysis => "chain analysis",
            Stage::Lambda => "lambda",
            Stage::FixedPoint => "fixed point",
            Stage::Thresholds => "thresholds",
            Stage::Simulation => "simulation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub value_iteration: ValueIterationOptions,
    pub fixed_point: FixedPointOptions,
    pub grid_size: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { value_iteration: ValueIterationOptions::default(), fixed_point: FixedPointOptions::default(), grid_size: 1000 }
    }
}

/// Mode policies and everything about them that does not depend on `ρ`.
#[derive(Debug, Clone)]
pub struct ModeAnalysis {
    pub mdp: ModePairMdp,
    pub pre: ValueIterationOutcome,
    pub post: ValueIterationOutcome,
    pub chains: InducedChains,
    /// Indexed `[policy][kernel]`, `0` for pre-change.
    pub stationary: [[StationaryDistribution; 2]; 2],
    /// Averages with `ρ` left at the model's change rate.
    pub lambda_inputs: LambdaInputs,
}

pub fn analyze_modes(mdp: &ModePairMdp, opts: &ValueIterationOptions) -> Result<ModeAnalysis, StageError> {
    let pre = value_iteration(mdp.kernel(Mode::Pre), mdp.cost(Mode::Pre), mdp.discount(), *opts).at(Stage::PolicySynthesis)?;
    let post = value_iteration(mdp.kernel(Mode::Post), mdp.cost(Mode::Post), mdp.discount(), *opts).at(Stage::PolicySynthesis)?;
    let chains = InducedChains::build(mdp, &pre.policy, &post.policy).at(Stage::ChainAnalysis)?;
    let stat = |i: Mode, j: Mode| stationary_distribution(chains.get(i, j)).at(Stage::ChainAnalysis);
    let stationary = [
        [stat(Mode::Pre, Mode::Pre)?, stat(Mode::Pre, Mode::Post)?],
        [stat(Mode::Post, Mode::Pre)?, stat(Mode::Post, Mode::Post)?],
    ];
    let avg = |i: usize, j: usize, policy: Mode, kernel: Mode| stationary[i][j].average_cost(chains.get(policy, kernel));
    let lambda_inputs = LambdaInputs {
        avg_cost_21: avg(1, 0, Mode::Post, Mode::Pre),
        avg_cost_11: avg(0, 0, Mode::Pre, Mode::Pre),
        avg_cost_12: avg(0, 1, Mode::Pre, Mode::Post),
        avg_cost_22: avg(1, 1, Mode::Post, Mode::Post),
        rho: mdp.change_rate(),
    };
    Ok(ModeAnalysis { mdp: mdp.clone(), pre, post, chains, stationary, lambda_inputs })
}

impl ModeAnalysis {
    pub fn lambda(&self, rho: f64) -> Result<f64, StageError> {
        compute_lambda(&self.lambda_inputs.with_rho(rho)).at(Stage::Lambda)
    }

    /// Stopping problem and thresholds at change rate `rho`.
    pub fn solve_switching(&self, rho: f64, opts: &SolveOptions) -> Result<SolvedSwitching, StageError> {
        let mdp = self.mdp.with_change_rate(rho).at(Stage::Environment)?;
        let lambda = self.lambda(rho)?;
        let dynamics = BeliefDynamics::from_policy(&mdp, &self.pre.policy).at(Stage::FixedPoint)?;
        let grid = BeliefGrid::uniform(opts.grid_size).at(Stage::FixedPoint)?;
        let problem = StoppingProblem::new(dynamics, lambda, grid).at(Stage::FixedPoint)?;
        let solution = problem.solve(opts.fixed_point).at(Stage::FixedPoint)?;
        let rule = problem.extract_thresholds(&solution.table).at(Stage::Thresholds)?;
        Ok(SolvedSwitching { mdp, lambda, problem, solution, rule })
    }

    pub fn setup(&self, solved: &SolvedSwitching) -> Result<SwitchingSetup, StageError> {
        SwitchingSetup::new(solved.mdp.clone(), self.pre.policy.clone(), self.post.policy.clone(), solved.rule.clone(), solved.lambda)
            .at(Stage::Simulation)
    }
}

#[derive(Debug, Clone)]
pub struct SolvedSwitching {
    pub mdp: ModePairMdp,
    pub lambda: f64,
    pub problem: StoppingProblem,
    pub solution: FixedPointSolution,
    pub rule: SwitchRule,
}

impl SolvedSwitching {
    /// `E[Ṽ(0, X₀)]` for `X₀` uniform over states.
    pub fn value_at_zero(&self) -> f64 {
        let n = self.mdp.n_states();
        self.solution.table.expected_at_zero(&vec![1.0 / n as f64; n])
    }
}

/// Full solve at the model's own change rate.
pub fn solve(mdp: &ModePairMdp, opts: &SolveOptions) -> Result<(ModeAnalysis, SolvedSwitching), StageError> {
    let analysis = analyze_modes(mdp, &opts.value_iteration)?;
    let solved = analysis.solve_switching(mdp.change_rate(), opts)?;
    Ok((analysis, solved))
}
