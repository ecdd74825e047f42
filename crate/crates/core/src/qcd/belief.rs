use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Mode, ModePairMdp};

/// Uniform grid on `[0, 1]` with exact endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGrid {
    points: Vec<f64>,
}

/// Position of an off-grid belief: the bracketing cell and the weight of its
/// upper end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lower: usize,
    pub upper_weight: f64,
}

impl BeliefGrid {
    pub fn uniform(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("belief grid needs at least 2 points, got {size}")));
        }
        let last = (size - 1) as f64;
        Ok(BeliefGrid { points: (0..size).map(|i| i as f64 / last).collect() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    /// Linear-interpolation weights for `q ∈ [0, 1]`.
    pub fn locate(&self, q: f64) -> GridPoint {
        let last = self.points.len() - 1;
        let scaled = q.clamp(0.0, 1.0) * last as f64;
        let lower = (scaled.floor() as usize).min(last - 1);
        GridPoint { lower, upper_weight: scaled - lower as f64 }
    }

    /// Piecewise-linear interpolation of grid samples `f(points[i])`.
    pub fn interpolate(&self, q: f64, sample: impl Fn(usize) -> f64) -> f64 {
        let at = self.locate(q);
        let lo = sample(at.lower);
        if at.upper_weight == 0.0 {
            lo
        } else {
            (1.0 - at.upper_weight) * lo + at.upper_weight * sample(at.lower + 1)
        }
    }
}

/// Pre- and post-change transition rows under the pre-change policy, and
/// the change rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefDynamics {
    n_states: usize,
    rho: f64,
    pre: Vec<f64>,
    post: Vec<f64>,
}

impl BeliefDynamics {
    /// `pre[x][x']`, `post[x][x']` restricted to the actions of one policy.
    pub fn new(pre: Vec<Vec<f64>>, post: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let n = pre.len();
        if n == 0 || post.len() != n || pre.iter().chain(&post).any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("belief dynamics need two square matrices of equal size".into()));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("change rate {rho} outside [0,1]")));
        }
        for (row, r) in pre.iter().chain(&post).enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotStochastic { what: "belief dynamics", row: row % n, sum });
            }
        }
        Ok(BeliefDynamics { n_states: n, rho, pre: pre.concat(), post: post.concat() })
    }

    /// Rows of `P₁(·|x, π(x))` and `P₂(·|x, π(x))` for the policy run
    /// before switching.
    pub fn from_policy(mdp: &ModePairMdp, policy: &DeterministicPolicy) -> Result<Self> {
        let rows = |mode: Mode| -> Vec<Vec<f64>> {
            (0..mdp.n_states()).map(|x| mdp.kernel(mode).row(x, policy.action(x)).to_vec()).collect()
        };
        if policy.len() != mdp.n_states() {
            return Err(Error::InvalidArgument("policy does not cover the state space".into()));
        }
        BeliefDynamics::new(rows(Mode::Pre), rows(Mode::Post), mdp.change_rate())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn pre_row(&self, x: usize) -> &[f64] {
        &self.pre[x * self.n_states..(x + 1) * self.n_states]
    }

    pub fn post_row(&self, x: usize) -> &[f64] {
        &self.post[x * self.n_states..(x + 1) * self.n_states]
    }

    /// `p̄ = p + ρ(1-p)`, the prior probability that the next transition is
    /// drawn from the post-change kernel.
    pub fn propagated(&self, p: f64) -> f64 {
        p + self.rho * (1.0 - p)
    }

    /// Unnormalized posterior mass of the change and the total mass of the
    /// observed transition.
    fn joint(&self, x: usize, x_next: usize, p: f64) -> (f64, f64) {
        let p_bar = self.propagated(p);
        let changed = p_bar * self.post[x * self.n_states + x_next];
        (changed, changed + (1.0 - p_bar) * self.pre[x * self.n_states + x_next])
    }

    /// Bayes update of the belief after observing `x → x_next`.
    pub fn belief_update(&self, x: usize, x_next: usize, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("belief {p} outside [0,1]")));
        }
        let (changed, total) = self.joint(x, x_next, p);
        if total > 0.0 {
            Ok(changed / total)
        } else {
            Err(Error::ImpossibleTransition { from: x, to: x_next })
        }
    }

    /// `(1-p̄) P₁(·|x) + p̄ P₂(·|x)`.
    pub fn mixture_transition(&self, x: usize, p: f64) -> Vec<f64> {
        (0..self.n_states).map(|y| self.joint(x, y, p).1).collect()
    }

    /// Next-state probabilities paired with the updated belief, skipping
    /// transitions of zero probability.
    pub(crate) fn outcomes(&self, x: usize, p: f64) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.n_states).filter_map(move |y| {
            let (changed, total) = self.joint(x, y, p);
            (total > 0.0).then(|| (y, total, changed / total))
        })
    }
}

pub fn belief_update(dynamics: &BeliefDynamics, x: usize, x_next: usize, p: f64) -> Result<f64> {
    dynamics.belief_update(x, x_next, p)
}

pub fn mixture_transition(dynamics: &BeliefDynamics, x: usize, p: f64) -> Vec<f64> {
    dynamics.mixture_transition(x, p)
}
