//! Finite MDPs with a pre- and post-change mode, mode-optimal policies via
//! value iteration, and evaluation of the chains a fixed policy induces.
//!
//! Costs are minimized everywhere. Kernels are stored flat, indexed
//! `[x][u][x']`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// The two modes of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Mode 1, active before the change.
    Pre,
    /// Mode 2, active after the change.
    Post,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Pre, Mode::Post];

    /// 1 for [`Mode::Pre`], 2 for [`Mode::Post`].
    pub fn number(self) -> usize {
        match self {
            Mode::Pre => 1,
            Mode::Post => 2,
        }
    }
}

/// A controlled transition kernel `P(x' | x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Kernel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("kernel needs at least one state and one action".into()));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidArgument(format!(
                "kernel has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            )));
        }
        let kernel = Kernel { n_states, n_actions, probs };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Builds a kernel from nested `[x][u][x']` rows.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for (x, per_action) in rows.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::InvalidArgument(format!("state {x} has {} actions", per_action.len())));
            }
            for row in per_action {
                if row.len() != n_states {
                    return Err(Error::InvalidArgument(format!("a row of state {x} has length {}", row.len())));
                }
                probs.extend_from_slice(row);
            }
        }
        Kernel::new(n_states, n_actions, probs)
    }

    fn validate(&self) -> Result<()> {
        for (index, &value) in self.probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidEntry { what: "kernel", index, value });
            }
        }
        for (row, chunk) in self.probs.chunks(self.n_states).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { what: "kernel", row, sum });
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `P(· | x, u)`.
    pub fn row(&self, x: usize, u: usize) -> &[f64] {
        let start = (x * self.n_actions + u) * self.n_states;
        &self.probs[start..start + self.n_states]
    }
}

/// Stage costs `c(x, u)`, indexed `[x][u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    n_states: usize,
    n_actions: usize,
    costs: Vec<f64>,
}

impl CostTable {
    pub fn new(n_states: usize, n_actions: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != n_states * n_actions {
            return Err(Error::InvalidArgument(format!(
                "cost table has {} entries, expected {}",
                costs.len(),
                n_states * n_actions
            )));
        }
        if let Some((index, &value)) = costs.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            return Err(Error::InvalidEntry { what: "stage cost", index, value });
        }
        Ok(CostTable { n_states, n_actions, costs })
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidArgument("ragged cost table".into()));
        }
        CostTable::new(rows.len(), n_actions, rows.concat())
    }

    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.costs[x * self.n_actions + u]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn max_abs(&self) -> f64 {
        self.costs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// A finite MDP whose kernel (and possibly expected stage cost) switches from
/// mode 1 to mode 2 at a geometric change point with parameter `change_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePairMdp {
    kernel_pre: Kernel,
    kernel_post: Kernel,
    cost_pre: CostTable,
    cost_post: CostTable,
    discount: f64,
    change_rate: f64,
}

impl ModePairMdp {
    /// Mode-independent stage cost.
    pub fn new(kernel_pre: Kernel, kernel_post: Kernel, stage_cost: CostTable, discount: f64, change_rate: f64) -> Result<Self> {
        Self::with_mode_costs(kernel_pre, kernel_post, stage_cost.clone(), stage_cost, discount, change_rate)
    }

    /// Stage costs that are expectations over a mode-dependent disturbance.
    pub fn with_mode_costs(
        kernel_pre: Kernel,
        kernel_post: Kernel,
        cost_pre: CostTable,
        cost_post: CostTable,
        discount: f64,
        change_rate: f64,
    ) -> Result<Self> {
        let (n, m) = (kernel_pre.n_states, kernel_pre.n_actions);
        if kernel_post.n_states != n || kernel_post.n_actions != m {
            return Err(Error::InvalidArgument("pre- and post-change kernels differ in shape".into()));
        }
        for cost in [&cost_pre, &cost_post] {
            if cost.n_states != n || cost.n_actions != m {
                return Err(Error::InvalidArgument("cost table shape does not match the kernels".into()));
            }
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
        }
        check_change_rate(change_rate)?;
        Ok(ModePairMdp { kernel_pre, kernel_post, cost_pre, cost_post, discount, change_rate })
    }

    /// Same model with another change rate.
    pub fn with_change_rate(&self, change_rate: f64) -> Result<Self> {
        check_change_rate(change_rate)?;
        Ok(ModePairMdp { change_rate, ..self.clone() })
    }

    pub fn n_states(&self) -> usize {
        self.kernel_pre.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.kernel_pre.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn change_rate(&self) -> f64 {
        self.change_rate
    }

    pub fn kernel(&self, mode: Mode) -> &Kernel {
        match mode {
            Mode::Pre => &self.kernel_pre,
            Mode::Post => &self.kernel_post,
        }
    }

    pub fn cost(&self, mode: Mode) -> &CostTable {
        match mode {
            Mode::Pre => &self.cost_pre,
            Mode::Post => &self.cost_post,
        }
    }

    /// Whether the stage cost depends on the mode.
    pub fn has_mode_costs(&self) -> bool {
        self.cost_pre != self.cost_post
    }
}

fn check_change_rate(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("change rate {rho} not in (0, 1)")))
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub action_of: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(action_of: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some(x) = action_of.iter().position(|&u| u >= n_actions) {
            return Err(Error::InvalidArgument(format!("state {x} maps to action {} >= {n_actions}", action_of[x])));
        }
        Ok(DeterministicPolicy { action_of })
    }

    pub fn action(&self, x: usize) -> usize {
        self.action_of[x]
    }

    pub fn len(&self) -> usize {
        self.action_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_of.is_empty()
    }
}

/// Discounted cost-to-go per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

/// The Markov chain `M_{i|j}` obtained by running policy `i` under mode `j`,
/// together with its per-state cost vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    pub transition: DMatrix<f64>,
    pub cost: DVector<f64>,
}

impl InducedChain {
    pub fn new(transition: DMatrix<f64>, cost: DVector<f64>) -> Result<Self> {
        let n = transition.nrows();
        if n == 0 || transition.ncols() != n || cost.len() != n {
            return Err(Error::InvalidArgument("chain matrix must be square and match the cost vector".into()));
        }
        for (row, r) in transition.row_iter().enumerate() {
            if r.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::NotStochastic { what: "chain", row, sum: r.sum() });
            }
            let sum = r.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { what: "chain", row, sum });
            }
        }
        Ok(InducedChain { transition, cost })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    /// One step of distribution propagation, `μ ↦ μP`.
    pub fn step(&self, mu: &DVector<f64>) -> DVector<f64> {
        self.transition.tr_mul(mu)
    }

    pub fn cost_sup_norm(&self) -> f64 {
        self.cost.amax()
    }
}

/// Stopping controls for [`value_iteration`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ValueIterationOptions {
    fn default() -> Self {
        ValueIterationOptions { tol: 1e-10, max_iter: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationOutcome {
    pub policy: DeterministicPolicy,
    pub values: ValueVector,
    pub iterations: usize,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
}

/// One Bellman backup `(TV)(x) = min_u c(x,u) + γ Σ P(x'|x,u) V(x')` and the
/// greedy policy, ties going to the lowest action index.
pub fn bellman_backup(kernel: &Kernel, cost: &CostTable, discount: f64, values: &[f64]) -> (Vec<f64>, DeterministicPolicy) {
    let n = kernel.n_states();
    let mut out = vec![0.0; n];
    let mut action_of = vec![0; n];
    for x in 0..n {
        let mut best = f64::INFINITY;
        for u in 0..kernel.n_actions() {
            let expected: f64 = kernel.row(x, u).iter().zip(values).map(|(p, v)| p * v).sum();
            let q = cost.get(x, u) + discount * expected;
            if q < best {
                best = q;
                action_of[x] = u;
            }
        }
        out[x] = best;
    }
    (out, DeterministicPolicy { action_of })
}

/// Value iteration from `V ≡ 0`.
///
/// Plain iteration contracts at rate `γ`, which is slow for `γ` near one, so
/// once the span of the residual drops below `tol` the greedy policy is
/// evaluated exactly and iteration resumes from that value if its Bellman
/// residual is still above `tol`.
pub fn value_iteration(kernel: &Kernel, cost: &CostTable, discount: f64, opts: ValueIterationOptions) -> Result<ValueIterationOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("value iteration tolerance must be positive".into()));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
    }
    let mut values = vec![0.0; kernel.n_states()];
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let (next, _) = bellman_backup(kernel, cost, discount, &values);
        let (lo, hi) = next
            .iter()
            .zip(&values)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        residual = lo.abs().max(hi.abs());
        values = next;
        if residual <= opts.tol {
            return finish(kernel, cost, discount, values, iteration, opts.tol);
        }
        if hi - lo <= opts.tol {
            let (_, greedy) = bellman_backup(kernel, cost, discount, &values);
            let chain = induced_chain(&greedy, kernel, cost)?;
            let exact = evaluate_policy(&chain, discount)?;
            let exact: Vec<f64> = exact.iter().copied().collect();
            let (polished, _) = bellman_backup(kernel, cost, discount, &exact);
            let polished_residual = sup_distance(&polished, &exact);
            if polished_residual <= opts.tol {
                return finish(kernel, cost, discount, exact, iteration, opts.tol);
            }
            values = polished;
        }
    }
    Err(Error::NoConvergence { stage: "value iteration", iterations: opts.max_iter, residual })
}

fn finish(kernel: &Kernel, cost: &CostTable, discount: f64, values: Vec<f64>, iterations: usize, tol: f64) -> Result<ValueIterationOutcome> {
    let (next, policy) = bellman_backup(kernel, cost, discount, &values);
    let residual = sup_distance(&next, &values);
    if residual > tol {
        return Err(Error::NoConvergence { stage: "value iteration", iterations, residual });
    }
    Ok(ValueIterationOutcome { policy, values: ValueVector { values }, iterations, residual })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Chain and cost vector of `policy` run under `kernel`, with
/// `cost_vec[x] = cost(x, policy(x))`.
pub fn induced_chain(policy: &DeterministicPolicy, kernel: &Kernel, cost: &CostTable) -> Result<InducedChain> {
    let n = kernel.n_states();
    if policy.len() != n {
        return Err(Error::InvalidArgument(format!("policy covers {} states, kernel has {n}", policy.len())));
    }
    if let Some(x) = policy.action_of.iter().position(|&u| u >= kernel.n_actions()) {
        return Err(Error::InvalidArgument(format!("policy action at state {x} out of range")));
    }
    let transition = DMatrix::from_fn(n, n, |x, y| kernel.row(x, policy.action(x))[y]);
    let cost_vec = DVector::from_fn(n, |x, _| cost.get(x, policy.action(x)));
    InducedChain::new(transition, cost_vec)
}

/// Exact infinite-horizon discounted cost, solving `(I - γP) v = c`.
pub fn evaluate_policy(chain: &InducedChain, discount: f64) -> Result<DVector<f64>> {
    let n = chain.n_states();
    let system = DMatrix::<f64>::identity(n, n) - &chain.transition * discount;
    system.lu().solve(&chain.cost).ok_or(Error::Singular("I - γP"))
}

/// Horizon length for [`finite_horizon_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

/// `Σ_{t<T} γ^t c^T (μ P^t)`, or the exact `T = ∞` value.
pub fn finite_horizon_cost(chain: &InducedChain, initial: &DVector<f64>, horizon: Horizon, discount: f64) -> Result<f64> {
    check_distribution(initial, chain.n_states())?;
    match horizon {
        Horizon::Infinite => Ok(evaluate_policy(chain, discount)?.dot(initial)),
        Horizon::Finite(steps) => Ok(propagate_cost(chain, initial.clone(), steps, discount).0),
    }
}

/// Discounted cost over `steps` steps starting from `mu`, and the
/// distribution after those steps.
pub(crate) fn propagate_cost(chain: &InducedChain, mut mu: DVector<f64>, steps: usize, discount: f64) -> (f64, DVector<f64>) {
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 0..steps {
        total += weight * chain.cost.dot(&mu);
        weight *= discount;
        mu = chain.step(&mu);
    }
    (total, mu)
}

pub(crate) fn check_distribution(mu: &DVector<f64>, n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::InvalidArgument(format!("distribution has length {}, expected {n}", mu.len())));
    }
    if let Some(index) = mu.iter().position(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidEntry { what: "distribution", index, value: mu[index] });
    }
    let sum = mu.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Point mass on state `x`.
pub fn point_mass(n: usize, x: usize) -> DVector<f64> {
    let mut mu = DVector::zeros(n);
    mu[x] = 1.0;
    mu
}
