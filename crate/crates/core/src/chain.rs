//! Stationary distributions, total-variation mixing profiles and the
//! cost-to-go gap bound for induced chains.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErgodicityFailure, Result};
use crate::mdp::{check_distribution, finite_horizon_cost, point_mass, Horizon, InducedChain};

/// Ratio between the largest admissible envelope constant `B` and `d(0)`.
pub const ENVELOPE_CAP_RATIO: f64 = 1e6;

/// Smallest rate reported when the profile reaches exactly zero.
pub const ENVELOPE_MIN_BETA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub dist: Vec<f64>,
}

impl StationaryDistribution {
    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.dist)
    }

    /// `‖Δ^T P - Δ^T‖₁`.
    pub fn residual(&self, chain: &InducedChain) -> f64 {
        let d = self.as_vector();
        (chain.step(&d) - d).lp_norm(1)
    }

    /// `c^T Δ` for the chain's own cost vector.
    pub fn average_cost(&self, chain: &InducedChain) -> f64 {
        chain.cost.dot(&self.as_vector())
    }
}

/// Boolean matrix product over the support pattern.
fn bool_mul(a: &[bool], b: &[bool], n: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for i in 0..n {
        for k in 0..n {
            if a[i * n + k] {
                for j in 0..n {
                    out[i * n + j] |= b[k * n + j];
                }
            }
        }
    }
    out
}

fn bool_pow(base: &[bool], mut exp: usize, n: usize) -> Vec<bool> {
    let mut result: Vec<bool> = (0..n * n).map(|k| k / n == k % n).collect();
    let mut square = base.to_vec();
    while exp > 0 {
        if exp & 1 == 1 {
            result = bool_mul(&result, &square, n);
        }
        exp >>= 1;
        if exp > 0 {
            square = bool_mul(&square, &square, n);
        }
    }
    result
}

/// Checks that the chain has a single closed class and that class is
/// aperiodic, i.e. that some power `P^k` has a strictly positive column.
/// Transient states are allowed.
pub fn check_ergodic(chain: &InducedChain) -> Result<()> {
    let n = chain.n_states();
    let support: Vec<bool> = (0..n * n).map(|k| chain.transition[(k / n, k % n)] > 0.0).collect();
    // Wielandt's exponent for the recurrent class plus the time to enter it.
    let power = bool_pow(&support, n + (n - 1) * (n - 1) + 1, n);
    if (0..n).any(|j| (0..n).all(|i| power[i * n + j])) {
        return Ok(());
    }
    // Distinguish several closed classes from one periodic class.
    let mut reach = support.clone();
    for i in 0..n {
        reach[i * n + i] = true;
    }
    let reach = bool_pow(&reach, n, n);
    let common = (0..n).any(|j| (0..n).all(|i| reach[i * n + j]));
    Err(Error::NotErgodic(if common { ErgodicityFailure::Periodic } else { ErgodicityFailure::Reducible }))
}

/// Whether `(I + P)^{n-1}` is entrywise positive (irreducibility).
pub fn is_irreducible(chain: &InducedChain) -> bool {
    let n = chain.n_states();
    let mut support: Vec<bool> = (0..n * n).map(|k| chain.transition[(k / n, k % n)] > 0.0).collect();
    for i in 0..n {
        support[i * n + i] = true;
    }
    bool_pow(&support, n.saturating_sub(1).max(1), n).into_iter().all(|b| b)
}

/// Unique `Δ` with `Δ^T P = Δ^T`, `Σ Δ = 1`.
pub fn stationary_distribution(chain: &InducedChain) -> Result<StationaryDistribution> {
    check_ergodic(chain)?;
    let n = chain.n_states();
    // Rows of P^T - I are linearly dependent, so one may be replaced by the
    // normalization constraint.
    let mut system = chain.transition.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut dist = system.lu().solve(&rhs).ok_or(Error::Singular("stationary system"))?;
    dist.iter_mut().for_each(|p| *p = p.max(0.0));
    let total = dist.sum();
    dist /= total;
    // A few power steps remove the solve's rounding residue.
    for _ in 0..4 {
        dist = chain.step(&dist);
    }
    let total = dist.sum();
    dist /= total;
    Ok(StationaryDistribution { dist: dist.iter().copied().collect() })
}

/// `d(t) = max_x TV(δ_x P^t, Δ)` and a geometric envelope `d(t) ≤ B β^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub tv_by_step: Vec<f64>,
    pub envelope_b: f64,
    pub envelope_beta: f64,
}

/// Total-variation distance, half the ℓ₁ distance.
pub fn total_variation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    0.5 * (a - b).lp_norm(1)
}

pub fn mixing_profile(chain: &InducedChain, t_max: usize) -> Result<MixingProfile> {
    if t_max < 1 {
        return Err(Error::InvalidArgument("mixing profile needs t_max >= 1".into()));
    }
    let stationary = stationary_distribution(chain)?.as_vector();
    let n = chain.n_states();
    let mut rows: Vec<DVector<f64>> = (0..n).map(|x| point_mass(n, x)).collect();
    let mut tv_by_step = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            rows.iter_mut().for_each(|mu| *mu = chain.step(mu));
        }
        let d = rows.iter().map(|mu| total_variation(mu, &stationary)).fold(0.0, f64::max);
        tv_by_step.push(d.min(1.0));
    }
    let (envelope_b, envelope_beta) = fit_geometric_envelope(&tv_by_step);
    Ok(MixingProfile { tv_by_step, envelope_b, envelope_beta })
}

/// Smallest `β` whose envelope constant `B(β) = max_t d(t)/β^t` stays within
/// [`ENVELOPE_CAP_RATIO`]` · d(0)`.
///
/// `B(β) ≤ C` holds iff `β ≥ (d(t)/C)^{1/t}` for every `t ≥ 1` with
/// `d(t) > 0`, so the infimum is the largest of those roots.
pub fn fit_geometric_envelope(profile: &[f64]) -> (f64, f64) {
    let d0 = profile.first().copied().unwrap_or(0.0);
    let cap = ENVELOPE_CAP_RATIO * d0;
    let beta = profile
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &d)| d > 0.0)
        .map(|(t, &d)| (d / cap).powf(1.0 / t as f64))
        .fold(ENVELOPE_MIN_BETA, f64::max)
        .min(1.0 - f64::EPSILON);
    let b = envelope_constant(profile, beta).max(f64::MIN_POSITIVE);
    (b, beta)
}

/// `max_t d(t) / β^t` over the recorded profile, including `t = 0`.
pub fn envelope_constant(profile: &[f64], beta: f64) -> f64 {
    profile
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(t, &d)| d / beta.powi(t as i32))
        .fold(0.0, f64::max)
}

/// `|J^k(μ) - (1-γ^k)/(1-γ) c^T Δ|`.
pub fn cost_to_go_gap(chain: &InducedChain, mu: &DVector<f64>, discount: f64, horizon: Horizon) -> Result<f64> {
    check_distribution(mu, chain.n_states())?;
    let stationary = stationary_distribution(chain)?;
    Ok(gap_with(chain, &stationary, mu, discount, horizon)?)
}

fn gap_with(chain: &InducedChain, stationary: &StationaryDistribution, mu: &DVector<f64>, discount: f64, horizon: Horizon) -> Result<f64> {
    let weight = match horizon {
        Horizon::Finite(0) => return Ok(0.0),
        Horizon::Finite(k) => (1.0 - discount.powi(k as i32)) / (1.0 - discount),
        Horizon::Infinite => 1.0 / (1.0 - discount),
    };
    let cost = finite_horizon_cost(chain, mu, horizon, discount)?;
    Ok((cost - weight * stationary.average_cost(chain)).abs())
}

/// Outcome of [`verify_mixing_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingBoundReport {
    pub envelope_b: f64,
    pub envelope_beta: f64,
    /// Smallest `bound - gap` over all start states and horizons.
    pub min_slack: f64,
    /// Largest `bound - gap`.
    pub max_slack: f64,
    /// Smallest slack of the intermediate bound `2‖c‖ Σ_{t<k} γ^t d(t)`.
    pub min_slack_intermediate: f64,
    pub largest_gap: f64,
}

/// Checks `E^k(δ_x, Δ) ≤ 2‖c‖∞ B (1-(γβ)^k)/(1-γβ)` and the sharper
/// `E^k ≤ 2‖c‖∞ Σ_{t<k} γ^t d(t)` for every start state and `k = 1..=k_max`.
pub fn verify_mixing_bound(chain: &InducedChain, discount: f64, k_max: usize) -> Result<MixingBoundReport> {
    let profile = mixing_profile(chain, k_max.max(1))?;
    let stationary = stationary_distribution(chain)?;
    let n = chain.n_states();
    let c_sup = chain.cost_sup_norm();
    let gb = discount * profile.envelope_beta;
    let stationary_cost = stationary.average_cost(chain);
    let mut report = MixingBoundReport {
        envelope_b: profile.envelope_b,
        envelope_beta: profile.envelope_beta,
        min_slack: f64::INFINITY,
        max_slack: f64::NEG_INFINITY,
        min_slack_intermediate: f64::INFINITY,
        largest_gap: 0.0,
    };
    // Rounding allowance on the left-hand side.
    let fuzz = |scale: f64| 1e-12 * (1.0 + scale);
    for x in 0..n {
        let mut mu = point_mass(n, x);
        let mut cost = 0.0;
        let mut weight = 1.0;
        let mut partial_tv = 0.0;
        for k in 1..=k_max {
            cost += weight * chain.cost.dot(&mu);
            partial_tv += weight * profile.tv_by_step[k - 1];
            weight *= discount;
            mu = chain.step(&mu);
            let stationary_part = (1.0 - weight) / (1.0 - discount) * stationary_cost;
            let gap = (cost - stationary_part).abs();
            let bound = 2.0 * c_sup * profile.envelope_b * (1.0 - gb.powi(k as i32)) / (1.0 - gb);
            let intermediate = 2.0 * c_sup * partial_tv;
            let allowance = fuzz(cost.abs());
            if gap > bound + allowance || gap > intermediate + allowance {
                return Err(Error::MixingBoundViolated { state: x, horizon: k, gap, bound: bound.min(intermediate) });
            }
            report.min_slack = report.min_slack.min(bound - gap);
            report.max_slack = report.max_slack.max(bound - gap);
            report.min_slack_intermediate = report.min_slack_intermediate.min(intermediate - gap);
            report.largest_gap = report.largest_gap.max(gap);
        }
    }
    if k_max == 0 {
        report.min_slack = 0.0;
        report.max_slack = 0.0;
        report.min_slack_intermediate = 0.0;
    }
    Ok(report)
}
