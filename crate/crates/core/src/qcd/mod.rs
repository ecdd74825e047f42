//! Bayesian change detection on the pre-change policy's state transitions,
//! posed as an optimal stopping problem over (belief, state).
//!
//! The belief `p_t` is the posterior probability that the post-change kernel
//! has already generated the current state. Stopping at `(p, x)` costs
//! `λ(1-p)`; continuing costs `p` plus the expected cost-to-go after one
//! more observed transition under the pre-change policy. The optimal value
//! is the limit of the Bellman operator iterated from `ψ(p,x) = λ(1-p)`, and
//! the optimal rule stops once `p` reaches a state-dependent threshold.

mod belief;
mod solver;

pub use belief::{belief_update, mixture_transition, BeliefDynamics, BeliefGrid, GridPoint};
pub use solver::{
    bellman_apply, evaluate_switch_rule, extract_thresholds, finite_horizon_dp, solve_fixed_point, BeliefValueTable,
    FixedPointOptions, FixedPointSolution, StoppingProblem, SwitchRule,
};
