//! The false-alarm/delay tradeoff coefficient `λ` and the rescaled
//! approximate regret `E[(τ-Γ)₊] + λ P{Γ > τ}`.

use serde::{Deserialize, Serialize};

use crate::chain::stationary_distribution;
use crate::error::{Error, Result};
use crate::mdp::{induced_chain, DeterministicPolicy, InducedChain, Mode, ModePairMdp};

/// Stationary average costs of the four induced chains, `c_{i|j}^T Δ_{i|j}`
/// for policy `i` run under mode `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaInputs {
    pub avg_cost_21: f64,
    pub avg_cost_11: f64,
    pub avg_cost_12: f64,
    pub avg_cost_22: f64,
    pub rho: f64,
}

impl LambdaInputs {
    /// Extra average cost of running the post-change policy before the change.
    pub fn numerator(&self) -> f64 {
        self.avg_cost_21 - self.avg_cost_11
    }

    /// Extra average cost of running the pre-change policy after the change.
    pub fn denominator(&self) -> f64 {
        self.avg_cost_12 - self.avg_cost_22
    }

    pub fn with_rho(self, rho: f64) -> Self {
        LambdaInputs { rho, ..self }
    }
}

/// `λ = (c₂ᵀΔ₂|₁ − c₁ᵀΔ₁|₁) / ((c₁ᵀΔ₁|₂ − c₂ᵀΔ₂|₂) ρ)`.
pub fn compute_lambda(inputs: &LambdaInputs) -> Result<f64> {
    let numerator = inputs.numerator();
    let denominator = inputs.denominator();
    if !(numerator > 0.0) {
        return Err(Error::LambdaNumerator(numerator));
    }
    if !(denominator > 0.0) {
        return Err(Error::LambdaDenominator(denominator));
    }
    if !(inputs.rho > 0.0 && inputs.rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("change rate {} not in (0, 1]", inputs.rho)));
    }
    Ok(numerator / denominator / inputs.rho)
}

/// The four chains `M_{i|j}`, indexed by (policy mode, kernel mode).
#[derive(Debug, Clone)]
pub struct InducedChains {
    chains: [[InducedChain; 2]; 2],
}

impl InducedChains {
    /// Policy `i` under mode `j` uses `P_j` and the mode-`j` stage cost.
    pub fn build(mdp: &ModePairMdp, pre: &DeterministicPolicy, post: &DeterministicPolicy) -> Result<Self> {
        let chain = |policy: &DeterministicPolicy, mode: Mode| induced_chain(policy, mdp.kernel(mode), mdp.cost(mode));
        Ok(InducedChains {
            chains: [
                [chain(pre, Mode::Pre)?, chain(pre, Mode::Post)?],
                [chain(post, Mode::Pre)?, chain(post, Mode::Post)?],
            ],
        })
    }

    pub fn get(&self, policy: Mode, kernel: Mode) -> &InducedChain {
        &self.chains[policy.number() - 1][kernel.number() - 1]
    }

    /// Exact stationary averages for `λ`.
    pub fn lambda_inputs(&self, rho: f64) -> Result<LambdaInputs> {
        let avg = |i: Mode, j: Mode| -> Result<f64> {
            let chain = self.get(i, j);
            Ok(stationary_distribution(chain)?.average_cost(chain))
        };
        Ok(LambdaInputs {
            avg_cost_21: avg(Mode::Post, Mode::Pre)?,
            avg_cost_11: avg(Mode::Pre, Mode::Pre)?,
            avg_cost_12: avg(Mode::Pre, Mode::Post)?,
            avg_cost_22: avg(Mode::Post, Mode::Post)?,
            rho,
        })
    }
}

/// Moments of a stopping rule relative to the change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxRegretStats {
    /// `E[(τ-Γ)₊]`
    pub mean_overshoot: f64,
    /// `P{Γ > τ}`
    pub prob_false_alarm: f64,
    /// `E[(Γ-τ)₊]`
    pub mean_undershoot: f64,
}

impl ApproxRegretStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_overshoot >= 0.0 && self.mean_undershoot >= 0.0) {
            return Err(Error::InvalidArgument("regret moments must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.prob_false_alarm) {
            return Err(Error::InvalidArgument(format!("false-alarm probability {} outside [0,1]", self.prob_false_alarm)));
        }
        Ok(())
    }
}

/// `E[(τ-Γ)₊] + λ P{Γ > τ}`.
pub fn approx_regret(stats: &ApproxRegretStats, lambda: f64) -> f64 {
    stats.mean_overshoot + lambda * stats.prob_false_alarm
}
