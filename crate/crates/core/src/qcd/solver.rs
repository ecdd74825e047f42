use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::belief::{BeliefDynamics, BeliefGrid};
use crate::error::{Error, Result};

/// Cells per table above which the Bellman operator runs on the rayon pool.
const PARALLEL_CELLS: usize = 4096;

/// Values on the belief grid × state set, stored belief-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefValueTable {
    pub grid: BeliefGrid,
    n_states: usize,
    values: Vec<f64>,
}

impl BeliefValueTable {
    pub fn from_fn(grid: &BeliefGrid, n_states: usize, f: impl Fn(f64, usize) -> f64) -> Self {
        let values = grid.points().iter().flat_map(|&p| (0..n_states).map(move |x| (p, x))).map(|(p, x)| f(p, x)).collect();
        BeliefValueTable { grid: grid.clone(), n_states, values }
    }

    /// `ψ(p, x) = λ(1-p)`, the cost of stopping immediately.
    pub fn stopping_cost(grid: &BeliefGrid, n_states: usize, lambda: f64) -> Self {
        Self::from_fn(grid, n_states, |p, _| lambda * (1.0 - p))
    }

    pub fn zeros(grid: &BeliefGrid, n_states: usize) -> Self {
        Self::from_fn(grid, n_states, |_, _| 0.0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Value at grid index `i`, state `x`.
    pub fn get(&self, i: usize, x: usize) -> f64 {
        self.values[i * self.n_states + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation in `p` at fixed `x`.
    pub fn interpolate(&self, p: f64, x: usize) -> f64 {
        self.grid.interpolate(p, |i| self.get(i, x))
    }

    pub fn sup_distance(&self, other: &BeliefValueTable) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `E_{X₀∼μ₀}[V(0, X₀)]`.
    pub fn expected_at_zero(&self, initial: &[f64]) -> f64 {
        initial.iter().enumerate().map(|(x, w)| w * self.get(0, x)).sum()
    }
}

/// State-dependent belief thresholds; stop at `(p, x)` iff `p ≥ threshold[x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRule {
    pub threshold: Vec<f64>,
}

impl SwitchRule {
    pub fn new(threshold: Vec<f64>) -> Result<Self> {
        if let Some(x) = threshold.iter().position(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument(format!("threshold of state {x} outside [0,1]")));
        }
        Ok(SwitchRule { threshold })
    }

    /// Stops at `t = 0` in every state.
    pub fn immediate(n_states: usize) -> Self {
        SwitchRule { threshold: vec![0.0; n_states] }
    }

    pub fn stops(&self, x: usize, p: f64) -> bool {
        p >= self.threshold[x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { tol: 1e-9, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub table: BeliefValueTable,
    pub iterations: usize,
    /// Sup-norm change in the last iteration.
    pub residual: f64,
}

/// The stopping problem for one `(dynamics, λ, grid)`, with the expectation
/// in the continuation cost precomputed as a sparse linear map over cells.
///
/// Beliefs are propagated exactly; only value lookups interpolate, so each
/// `(p, x) → (Φ, x')` outcome spreads over the two bracketing grid points.
#[derive(Debug, Clone)]
pub struct StoppingProblem {
    dynamics: BeliefDynamics,
    lambda: f64,
    grid: BeliefGrid,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl StoppingProblem {
    pub fn new(dynamics: BeliefDynamics, lambda: f64, grid: BeliefGrid) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be finite and nonnegative")));
        }
        let n = dynamics.n_states();
        let mut offsets = Vec::with_capacity(grid.len() * n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for &p in grid.points() {
            for x in 0..n {
                for (y, prob, q) in dynamics.outcomes(x, p) {
                    let at = grid.locate(q);
                    targets.push(at.lower * n + y);
                    weights.push(prob * (1.0 - at.upper_weight));
                    if at.upper_weight > 0.0 {
                        targets.push((at.lower + 1) * n + y);
                        weights.push(prob * at.upper_weight);
                    }
                }
                offsets.push(targets.len());
            }
        }
        Ok(StoppingProblem { dynamics, lambda, grid, offsets, targets, weights })
    }

    pub fn dynamics(&self) -> &BeliefDynamics {
        &self.dynamics
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn n_states(&self) -> usize {
        self.dynamics.n_states()
    }

    /// One grid cell's worth of interpolation error budget, `(1+λ)·h`: both
    /// the per-step cost `p` and the stopping cost `λ(1-p)` move by at most
    /// that much across a cell.
    pub fn grid_slack(&self) -> f64 {
        (1.0 + self.lambda) * self.grid.spacing()
    }

    pub fn stopping_cost(&self) -> BeliefValueTable {
        BeliefValueTable::stopping_cost(&self.grid, self.n_states(), self.lambda)
    }

    fn check_shape(&self, table: &BeliefValueTable) {
        assert_eq!(table.values.len(), self.grid.len() * self.n_states(), "table shape does not match the problem");
    }

    fn cell_continuation(&self, cell: usize, p: f64, values: &[f64]) -> f64 {
        let range = self.offsets[cell]..self.offsets[cell + 1];
        let expected: f64 = self.targets[range.clone()].iter().zip(&self.weights[range]).map(|(&t, &w)| w * values[t]).sum();
        p + expected
    }

    /// Fills `out` by `f(cell, p, x)` cell by cell; each cell reads only the
    /// previous table, so results do not depend on the thread schedule.
    fn map_cells(&self, out: &mut [f64], f: impl Fn(usize, f64, usize) -> f64 + Sync) {
        let n = self.n_states();
        let points = self.grid.points();
        let fill = |(i, row): (usize, &mut [f64])| {
            for (x, slot) in row.iter_mut().enumerate() {
                *slot = f(i * n + x, points[i], x);
            }
        };
        if out.len() >= PARALLEL_CELLS {
            out.par_chunks_mut(n).enumerate().for_each(fill);
        } else {
            out.chunks_mut(n).enumerate().for_each(fill);
        }
    }

    /// `p + E[V(Φ(X⁺, x, p), X⁺) | p, x]` on every cell.
    pub fn continuation(&self, table: &BeliefValueTable) -> BeliefValueTable {
        self.check_shape(table);
        let mut out = table.clone();
        self.map_cells(&mut out.values, |cell, p, _| self.cell_continuation(cell, p, &table.values));
        out
    }

    /// The Bellman operator: `min{λ(1-p), p + E[V(Φ, X⁺)]}`.
    pub fn apply(&self, table: &BeliefValueTable) -> BeliefValueTable {
        self.check_shape(table);
        let mut out = table.clone();
        let lambda = self.lambda;
        self.map_cells(&mut out.values, |cell, p, _| {
            let stop = lambda * (1.0 - p);
            stop.min(self.cell_continuation(cell, p, &table.values))
        });
        out
    }

    /// Iterates the operator from `start` until the a-posteriori error
    /// estimate `r_k q / (1-q)` is within `tol`, where `r_k` is the sup-norm
    /// change of the last step and `q = r_k / r_{k-1}` the observed
    /// contraction. The successive change is then also within `tol`.
    pub fn iterate_from(&self, start: BeliefValueTable, opts: FixedPointOptions) -> Result<FixedPointSolution> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument("fixed-point tolerance must be positive".into()));
        }
        let mut current = start;
        let mut residual = f64::INFINITY;
        for iteration in 1..=opts.max_iter {
            let next = self.apply(&current);
            let previous = residual;
            residual = next.sup_distance(&current);
            current = next;
            let ratio = residual / previous;
            let converged = residual == 0.0 || (residual <= opts.tol && ratio < 1.0 && residual * ratio / (1.0 - ratio) <= opts.tol);
            if converged {
                return Ok(FixedPointSolution { table: current, iterations: iteration, residual });
            }
        }
        Err(Error::NoConvergence { stage: "belief fixed point", iterations: opts.max_iter, residual })
    }

    /// The fixed point as the limit of iterates from `ψ`.
    pub fn solve(&self, opts: FixedPointOptions) -> Result<FixedPointSolution> {
        self.iterate_from(self.stopping_cost(), opts)
    }

    /// Thresholds from the stopping region of `table`: the smallest grid
    /// belief where stopping is no worse than continuing.
    pub fn extract_thresholds(&self, table: &BeliefValueTable) -> Result<SwitchRule> {
        let continuation = self.continuation(table);
        let points = self.grid.points();
        let mut threshold = Vec::with_capacity(self.n_states());
        for x in 0..self.n_states() {
            let stops = |i: usize| self.lambda * (1.0 - points[i]) <= continuation.get(i, x);
            let first = (0..points.len()).find(|&i| stops(i)).unwrap_or(points.len() - 1);
            // Smallest index from which every cell stops.
            let upper = (0..points.len()).rev().find(|&i| !stops(i)).map_or(0, |i| i + 1);
            if upper > first + 1 {
                return Err(Error::NotUpperInterval { state: x });
            }
            threshold.push(points[first]);
        }
        Ok(SwitchRule { threshold })
    }

    /// Cost of following `rule` on the grid: `λ(1-p)` where the rule stops,
    /// `p + E[V_rule(Φ, X⁺)]` elsewhere. Iterates upward from zero, so the
    /// limit is the rule's actual cost; values above `λ + 1/ρ` abort.
    pub fn evaluate_rule(&self, rule: &SwitchRule, opts: FixedPointOptions) -> Result<BeliefValueTable> {
        if rule.threshold.len() != self.n_states() {
            return Err(Error::InvalidArgument("rule does not cover the state space".into()));
        }
        let cap = self.lambda + 1.0 / self.dynamics.rho();
        let lambda = self.lambda;
        let mut current = BeliefValueTable::zeros(&self.grid, self.n_states());
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iter {
            let mut next = current.clone();
            self.map_cells(&mut next.values, |cell, p, x| {
                if rule.stops(x, p) {
                    lambda * (1.0 - p)
                } else {
                    self.cell_continuation(cell, p, &current.values)
                }
            });
            residual = next.sup_distance(&current);
            current = next;
            if current.values.iter().any(|&v| v > cap) {
                return Err(Error::RuleDiverged { cap });
            }
            if residual <= opts.tol {
                return Ok(current);
            }
        }
        Err(Error::NoConvergence { stage: "switch-rule evaluation", iterations: opts.max_iter, residual })
    }

    /// Backward induction `Ṽ^T_T = ψ`, `Ṽ^T_t = min{ψ, p + A^T_t}` down to
    /// `t = 0`, evaluating every expectation directly from the filter rather
    /// than through the precomputed operator.
    pub fn finite_horizon(&self, horizon: usize) -> BeliefValueTable {
        let n = self.n_states();
        let mut table = self.stopping_cost();
        for _ in 0..horizon {
            let previous = table.clone();
            self.map_cells(&mut table.values, |_, p, x| {
                let a: f64 = self.dynamics.outcomes(x, p).map(|(y, prob, q)| prob * previous.interpolate(q, y)).sum();
                (self.lambda * (1.0 - p)).min(p + a)
            });
            debug_assert_eq!(table.n_states, n);
        }
        table
    }
}

/// One application of the Bellman operator to `table`.
pub fn bellman_apply(table: &BeliefValueTable, dynamics: &BeliefDynamics, lambda: f64) -> Result<BeliefValueTable> {
    Ok(StoppingProblem::new(dynamics.clone(), lambda, table.grid.clone())?.apply(table))
}

pub fn solve_fixed_point(dynamics: &BeliefDynamics, lambda: f64, grid: &BeliefGrid, opts: FixedPointOptions) -> Result<FixedPointSolution> {
    StoppingProblem::new(dynamics.clone(), lambda, grid.clone())?.solve(opts)
}

/// `Ṽ^T_0` for the `T`-period problem that forces a stop at `T`.
pub fn finite_horizon_dp(dynamics: &BeliefDynamics, lambda: f64, grid: &BeliefGrid, horizon: usize) -> Result<BeliefValueTable> {
    Ok(StoppingProblem::new(dynamics.clone(), lambda, grid.clone())?.finite_horizon(horizon))
}

pub fn extract_thresholds(table: &BeliefValueTable, dynamics: &BeliefDynamics, lambda: f64) -> Result<SwitchRule> {
    StoppingProblem::new(dynamics.clone(), lambda, table.grid.clone())?.extract_thresholds(table)
}

pub fn evaluate_switch_rule(
    rule: &SwitchRule,
    dynamics: &BeliefDynamics,
    lambda: f64,
    grid: &BeliefGrid,
    opts: FixedPointOptions,
) -> Result<BeliefValueTable> {
    StoppingProblem::new(dynamics.clone(), lambda, grid.clone())?.evaluate_rule(rule, opts)
}
