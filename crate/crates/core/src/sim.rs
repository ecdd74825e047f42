//! Coupled Monte Carlo comparison of the change-detection controller (switch
//! at the first `t` with `p_t ≥ p°(X_t)`) against the controller that
//! observes the mode and switches at `Γ`.
//!
//! Timing: the transition `X_t → X_{t+1}` and the stage cost at `t` follow
//! the post-change model iff `t + 1 ≥ Γ`, so `X_Γ` is the first state drawn
//! from `P₂` and `p_t = P{Γ ≤ t | X_0..X_t}`. The mode-observing controller
//! runs `π₂` from `t = Γ` on.
//!
//! Both trajectories consume the same uniform at every step (inverse-CDF
//! sampling), so they coincide until the controllers first pick different
//! actions.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{point_mass, propagate_cost, DeterministicPolicy, Mode, ModePairMdp};
use crate::qcd::{BeliefDynamics, SwitchRule};
use crate::regret::InducedChains;

/// `Γ ≥ 1` with `P{Γ = t} = ρ(1-ρ)^{t-1}`.
pub fn sample_change_point<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> Result<u64> {
    let geometric = Geometric::new(rho).map_err(|e| Error::InvalidArgument(format!("change rate {rho}: {e}")))?;
    Ok(geometric.sample(rng).saturating_add(1))
}

/// Everything needed to run both controllers.
#[derive(Debug, Clone)]
pub struct SwitchingSetup {
    pub mdp: ModePairMdp,
    pub pre_policy: DeterministicPolicy,
    pub post_policy: DeterministicPolicy,
    pub rule: SwitchRule,
    pub dynamics: BeliefDynamics,
    pub lambda: f64,
}

impl SwitchingSetup {
    pub fn new(mdp: ModePairMdp, pre_policy: DeterministicPolicy, post_policy: DeterministicPolicy, rule: SwitchRule, lambda: f64) -> Result<Self> {
        if rule.threshold.len() != mdp.n_states() {
            return Err(Error::InvalidArgument("rule does not cover the state space".into()));
        }
        let dynamics = BeliefDynamics::from_policy(&mdp, &pre_policy)?;
        InducedChains::build(&mdp, &pre_policy, &post_policy)?;
        Ok(SwitchingSetup { mdp, pre_policy, post_policy, rule, dynamics, lambda })
    }

    pub fn with_rule(&self, rule: SwitchRule) -> Result<Self> {
        SwitchingSetup::new(self.mdp.clone(), self.pre_policy.clone(), self.post_policy.clone(), rule, self.lambda)
    }

    fn policy(&self, mode: Mode) -> &DeterministicPolicy {
        match mode {
            Mode::Pre => &self.pre_policy,
            Mode::Post => &self.post_policy,
        }
    }

    fn step_cost(&self, mode: Mode, x: usize, u: usize) -> f64 {
        self.mdp.cost(mode).get(x, u)
    }
}

/// Inverse-CDF draw from `row`; rounding shortfall falls to the last state of
/// positive probability.
fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (y, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    pub initial_state: usize,
    pub change_point: u64,
    /// Equal to the horizon when the rule never fired.
    pub switch_time: u64,
    pub triggered: bool,
    pub discounted_cost_cd: f64,
    pub discounted_cost_mo: f64,
    /// `Σ_{t<H} γ^t r_t`, with `r_t` the stage-cost difference between the
    /// two trajectories (zero while they coincide).
    pub exact_regret: f64,
    /// Same expectation with the post-decision costs replaced by their exact
    /// conditional expectations given the state at the decision.
    pub decomposed_regret: f64,
    pub false_alarm: bool,
    pub delay: u64,
    pub undershoot: u64,
    /// Realized `Σ_{t≤τ} g̃_t = (τ-Γ)₊ + λ·1{Γ > τ}`.
    pub overshoot_g: f64,
}

/// Runs one coupled episode over `horizon` steps.
pub fn run_episode(setup: &SwitchingSetup, chains: &InducedChains, index: u64, change_point: u64, horizon: u64, rng: &mut ChaCha8Rng) -> Result<EpisodeRecord> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if change_point == 0 {
        return Err(Error::InvalidArgument("change point must be at least 1".into()));
    }
    let n = setup.mdp.n_states();
    let discount = setup.mdp.discount();
    let x0 = rng.random_range(0..n);

    let (mut x_cd, mut x_mo) = (x0, x0);
    let mut belief = 0.0;
    let mut switch_time = None;
    let (mut cost_cd, mut cost_mo, mut regret) = (0.0, 0.0, 0.0);
    // Realized change-detection cost on [Γ, τ), for the decomposition.
    let mut cd_between = 0.0;
    let mut state_at_change = None;
    let mut state_at_switch = None;
    let mut weight = 1.0;

    for t in 0..horizon {
        if t == change_point {
            state_at_change = Some(x_mo);
        }
        if switch_time.is_none() && setup.rule.stops(x_cd, belief) {
            switch_time = Some(t);
            state_at_switch = Some(x_cd);
        }
        let cd_mode = if switch_time.is_some() { Mode::Post } else { Mode::Pre };
        let mo_mode = if t >= change_point { Mode::Post } else { Mode::Pre };
        let u_cd = setup.policy(cd_mode).action(x_cd);
        let u_mo = setup.policy(mo_mode).action(x_mo);
        let mode = if t + 1 >= change_point { Mode::Post } else { Mode::Pre };

        let c_cd = setup.step_cost(mode, x_cd, u_cd);
        let c_mo = setup.step_cost(mode, x_mo, u_mo);
        cost_cd += weight * c_cd;
        cost_mo += weight * c_mo;
        if (x_cd, u_cd) != (x_mo, u_mo) {
            regret += weight * (c_cd - c_mo);
        }
        if switch_time.is_none() && t >= change_point {
            cd_between += weight * c_cd;
        }
        weight *= discount;

        let draw: f64 = rng.random();
        let kernel = setup.mdp.kernel(mode);
        let next_cd = sample_row(kernel.row(x_cd, u_cd), draw);
        let next_mo = sample_row(kernel.row(x_mo, u_mo), draw);
        if switch_time.is_none() {
            belief = setup.dynamics.belief_update(x_cd, next_cd, belief)?;
        }
        x_cd = next_cd;
        x_mo = next_mo;
    }

    let tau = switch_time.unwrap_or(horizon);
    let gamma_pow = |k: u64| discount.powi(k.min(i32::MAX as u64) as i32);
    let remaining = (horizon - tau) as usize;
    let decomposed_regret = if tau < change_point {
        let x = state_at_switch.unwrap_or(x0);
        let k = ((change_point - 1 - tau) as usize).min(remaining);
        let cd = segmented_cost(chains, n, x, &[(Mode::Post, Mode::Pre, k), (Mode::Post, Mode::Post, remaining - k)], discount);
        let one = 1.min(remaining - k);
        let mo = segmented_cost(
            chains,
            n,
            x,
            &[(Mode::Pre, Mode::Pre, k), (Mode::Pre, Mode::Post, one), (Mode::Post, Mode::Post, remaining - k - one)],
            discount,
        );
        gamma_pow(tau) * (cd - mo)
    } else {
        let cd_after = match state_at_switch {
            Some(x) => gamma_pow(tau) * segmented_cost(chains, n, x, &[(Mode::Post, Mode::Post, remaining)], discount),
            None => 0.0,
        };
        let mo = match state_at_change {
            Some(x) => gamma_pow(change_point) * segmented_cost(chains, n, x, &[(Mode::Post, Mode::Post, (horizon - change_point) as usize)], discount),
            None => 0.0,
        };
        cd_between + cd_after - mo
    };

    let false_alarm = tau < change_point;
    Ok(EpisodeRecord {
        index,
        initial_state: x0,
        change_point,
        switch_time: tau,
        triggered: switch_time.is_some(),
        discounted_cost_cd: cost_cd,
        discounted_cost_mo: cost_mo,
        exact_regret: regret,
        decomposed_regret,
        false_alarm,
        delay: tau.saturating_sub(change_point),
        undershoot: change_point.saturating_sub(tau),
        overshoot_g: tau.saturating_sub(change_point) as f64 + if false_alarm { setup.lambda } else { 0.0 },
    })
}

/// Expected discounted cost from `δ_x` through consecutive chain segments
/// `(policy mode, kernel mode, steps)`.
fn segmented_cost(chains: &InducedChains, n: usize, x: usize, segments: &[(Mode, Mode, usize)], discount: f64) -> f64 {
    let mut mu: DVector<f64> = point_mass(n, x);
    let mut total = 0.0;
    let mut weight = 1.0;
    for &(policy, kernel, steps) in segments {
        let (cost, next) = propagate_cost(chains.get(policy, kernel), mu, steps, discount);
        total += weight * cost;
        weight *= discount.powi(steps as i32);
        mu = next;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_episodes: usize,
    pub horizon: u64,
    pub master_seed: u64,
    /// Worker threads; `0` uses the global rayon pool.
    pub workers: usize,
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
}

impl Estimate {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for v in samples {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        let variance = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Estimate { mean, stderr: if n > 0 { (variance / n as f64).sqrt() } else { 0.0 }, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_episodes: usize,
    pub horizon: u64,
    pub master_seed: u64,
    pub lambda: f64,
    pub cost_cd: Estimate,
    pub cost_mo: Estimate,
    pub exact_regret: Estimate,
    pub decomposed_regret: Estimate,
    pub false_alarm: Estimate,
    pub delay: Estimate,
    pub undershoot: Estimate,
    /// Empirical `E[(τ-Γ)₊] + λ·PFA`.
    pub approx_regret: Estimate,
    /// Welch statistic for mean CD cost minus mean MO cost.
    pub welch_t: f64,
    pub welch_df: f64,
    pub never_triggered: f64,
    /// `γ^H · max|c| / (1-γ)`, the cost neglected by truncating at `H`.
    pub truncation_bound: f64,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

/// Welch `t` and Welch-Satterthwaite degrees of freedom for two samples of
/// size `n`. Both are NaN when the pooled variance vanishes.
pub fn welch(a: &Estimate, b: &Estimate, n: usize) -> (f64, f64) {
    let (va, vb) = (a.stderr * a.stderr, b.stderr * b.stderr);
    let se2 = va + vb;
    if !(se2 > 0.0) || n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (n - 1) as f64 + vb * vb / (n - 1) as f64);
    (t, df)
}

/// Runs `n` coupled episodes; episode `i` draws from the ChaCha8 stream `i`
/// of the master seed, and aggregation follows episode order.
pub fn run_experiment(setup: &SwitchingSetup, config: &SimConfig) -> Result<SimReport> {
    if config.n_episodes == 0 {
        return Err(Error::InvalidArgument("no episodes requested".into()));
    }
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let chains = InducedChains::build(&setup.mdp, &setup.pre_policy, &setup.post_policy)?;
    let rho = setup.mdp.change_rate();
    let episode = |i: usize| -> Result<EpisodeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
        rng.set_stream(i as u64);
        let change_point = sample_change_point(rho, &mut rng)?;
        run_episode(setup, &chains, i as u64, change_point, config.horizon, &mut rng)
    };
    let run_all = || (0..config.n_episodes).into_par_iter().map(episode).collect::<Result<Vec<_>>>();
    let episodes = if config.workers == 0 {
        run_all()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run_all)?
    };
    Ok(summarize(setup, config, episodes))
}

fn summarize(setup: &SwitchingSetup, config: &SimConfig, episodes: Vec<EpisodeRecord>) -> SimReport {
    let n = episodes.len();
    let est = |f: &dyn Fn(&EpisodeRecord) -> f64| Estimate::from_samples(episodes.iter().map(f));
    let cost_cd = est(&|e| e.discounted_cost_cd);
    let cost_mo = est(&|e| e.discounted_cost_mo);
    let (welch_t, welch_df) = welch(&cost_cd, &cost_mo, n);
    let discount = setup.mdp.discount();
    let c_max = Mode::BOTH.iter().map(|&m| setup.mdp.cost(m).max_abs()).fold(0.0, f64::max);
    SimReport {
        n_episodes: n,
        horizon: config.horizon,
        master_seed: config.master_seed,
        lambda: setup.lambda,
        cost_cd,
        cost_mo,
        exact_regret: est(&|e| e.exact_regret),
        decomposed_regret: est(&|e| e.decomposed_regret),
        false_alarm: est(&|e| f64::from(u8::from(e.false_alarm))),
        delay: est(&|e| e.delay as f64),
        undershoot: est(&|e| e.undershoot as f64),
        approx_regret: est(&|e| e.overshoot_g),
        welch_t,
        welch_df,
        never_triggered: episodes.iter().filter(|e| !e.triggered).count() as f64 / n as f64,
        truncation_bound: discount.powf(config.horizon as f64) * c_max / (1.0 - discount),
        episodes,
    }
}

/// Empirical approximate regret against the DP value `E_{X₀}[Ṽ(0, X₀)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxRegretCheck {
    pub empirical: Estimate,
    pub dp_value: f64,
    pub tolerance: f64,
    pub consistent: bool,
}

/// Largest fraction of untriggered episodes accepted by
/// [`estimate_approx_regret_empirical`].
pub const MAX_TRUNCATED_FRACTION: f64 = 1e-4;

/// Compares the report's `E[(τ-Γ)₊] + λ·PFA` with `dp_value`, allowing three
/// standard errors plus `slack`.
pub fn estimate_approx_regret_empirical(report: &SimReport, lambda: f64, dp_value: f64, slack: f64) -> Result<ApproxRegretCheck> {
    if report.never_triggered >= MAX_TRUNCATED_FRACTION {
        return Err(Error::TruncatedEpisodes { fraction: report.never_triggered });
    }
    let empirical = if lambda == report.lambda {
        report.approx_regret
    } else {
        Estimate::from_samples(
            report.episodes.iter().map(|e| e.delay as f64 + if e.false_alarm { lambda } else { 0.0 }),
        )
    };
    let tolerance = 3.0 * empirical.stderr + slack;
    Ok(ApproxRegretCheck { empirical, dp_value, tolerance, consistent: (empirical.mean - dp_value).abs() <= tolerance })
}

/// Monte Carlo estimate of the exact discounted regret of `setup.rule`.
pub fn estimate_exact_regret(setup: &SwitchingSetup, config: &SimConfig) -> Result<Estimate> {
    Ok(run_experiment(setup, config)?.exact_regret)
}
