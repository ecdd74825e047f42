//! The two experimental environments: a seeded random MDP whose post-change
//! kernel permutes actions, and a lost-sales inventory model whose demand
//! switches from Poisson to uniform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CostTable, DeterministicPolicy, Kernel, Mode, ModePairMdp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    #[serde(default = "default_random_states")]
    pub n_states: usize,
    #[serde(default = "default_random_actions")]
    pub n_actions: usize,
    pub seed: u64,
    pub change_rate: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_random_states() -> usize {
    5
}

fn default_random_actions() -> usize {
    3
}

fn default_discount() -> f64 {
    0.999
}

impl RandomMdpSpec {
    pub fn new(seed: u64, change_rate: f64) -> Self {
        RandomMdpSpec { n_states: 5, n_actions: 3, seed, change_rate, discount: 0.999 }
    }
}

/// `P₁` with iid `U[0,1)` entries, row-normalized; `P₂(·|x,a) = P₁(·|x,a-1)`
/// cyclically; iid `U[0,1)` costs. Draw order: kernel `[x][u][x']`, then
/// costs `[x][u]`.
pub fn gen_random_mdp(spec: &RandomMdpSpec) -> Result<ModePairMdp> {
    let (n, m) = (spec.n_states, spec.n_actions);
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("random MDP needs at least one state and one action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pre = Vec::with_capacity(n * m * n);
    for _ in 0..n * m {
        let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            pre.extend(row.iter().map(|v| v / sum));
        } else {
            pre.extend(std::iter::repeat_n(1.0 / n as f64, n));
        }
    }
    let costs: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>()).collect();

    let mut post = Vec::with_capacity(pre.len());
    for x in 0..n {
        for a in 0..m {
            let src = (x * m + (a + m - 1) % m) * n;
            post.extend_from_slice(&pre[src..src + n]);
        }
    }
    ModePairMdp::new(
        Kernel::new(n, m, pre)?,
        Kernel::new(n, m, post)?,
        CostTable::new(n, m, costs)?,
        spec.discount,
        spec.change_rate,
    )
}

/// How the `v` term of the inventory stage cost is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostReading {
    /// `v · X_t`, per unit on hand at the start of the period.
    #[default]
    PerUnitStocked,
    /// `v · U_t`, per unit ordered.
    PerUnitOrdered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventorySpec {
    pub capacity: usize,
    #[serde(default = "default_order_cost")]
    pub order_cost: f64,
    #[serde(default = "default_holding_cost")]
    pub holding_cost: f64,
    pub lost_sales_cost: f64,
    #[serde(default = "default_demand_rate")]
    pub demand_rate: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_inventory_rate")]
    pub change_rate: f64,
    #[serde(default = "default_tail_eps")]
    pub demand_tail_eps: f64,
    #[serde(default)]
    pub cost_reading: CostReading,
}

fn default_order_cost() -> f64 {
    1.0
}

fn default_holding_cost() -> f64 {
    5.0
}

fn default_demand_rate() -> f64 {
    2.0
}

fn default_inventory_rate() -> f64 {
    0.01
}

fn default_tail_eps() -> f64 {
    1e-12
}

impl InventorySpec {
    /// `v = 1`, `h = 5`, `ν = 2`, `γ = 0.999`, `ρ = 0.01`.
    pub fn new(capacity: usize, lost_sales_cost: f64) -> Self {
        InventorySpec {
            capacity,
            order_cost: 1.0,
            holding_cost: 5.0,
            lost_sales_cost,
            demand_rate: 2.0,
            discount: 0.999,
            change_rate: 0.01,
            demand_tail_eps: 1e-12,
            cost_reading: CostReading::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidArgument("inventory capacity must be at least 1".into()));
        }
        for (name, v) in [("order", self.order_cost), ("holding", self.holding_cost), ("lost-sales", self.lost_sales_cost)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} cost {v} must be finite and nonnegative")));
            }
        }
        if !(self.demand_rate > 0.0 && self.demand_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("demand rate {} must be positive", self.demand_rate)));
        }
        if !(self.demand_tail_eps > 0.0 && self.demand_tail_eps < 1.0) {
            return Err(Error::InvalidArgument("demand tail mass must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Realized cost of ordering `u` at level `x` when demand is `w`.
    pub fn stage_cost(&self, x: usize, u: usize, w: usize) -> f64 {
        let level = (x + u).min(self.capacity) as f64;
        let w = w as f64;
        let linear = match self.cost_reading {
            CostReading::PerUnitStocked => x as f64,
            CostReading::PerUnitOrdered => u as f64,
        };
        self.order_cost * linear + self.holding_cost * (level - w).max(0.0) + self.lost_sales_cost * (w - level).max(0.0)
    }

    /// Demand pmf in `mode`, indexed by demand size.
    pub fn demand(&self, mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Pre => poisson_pmf(self.demand_rate, self.demand_tail_eps),
            Mode::Post => vec![1.0 / (self.capacity + 1) as f64; self.capacity + 1],
        }
    }
}

/// Poisson pmf cut at the smallest `w_max` with `P{W > w_max} < eps`, the
/// tail mass lumped into `w_max`.
pub fn poisson_pmf(rate: f64, eps: f64) -> Vec<f64> {
    let mut terms = vec![(-rate).exp()];
    // Terms well past the mode, until they are negligible against eps.
    loop {
        let k = terms.len();
        let next = terms[k - 1] * rate / k as f64;
        terms.push(next);
        if k as f64 > rate && next < eps * 1e-6 {
            break;
        }
    }
    let mut tail = vec![0.0; terms.len()];
    let mut acc = 0.0;
    for k in (0..terms.len()).rev() {
        tail[k] = acc;
        acc += terms[k];
    }
    let w_max = tail.iter().position(|&t| t < eps).unwrap_or(terms.len() - 1);
    let mut pmf = terms[..=w_max].to_vec();
    pmf[w_max] += tail[w_max];
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    pmf
}

/// The inventory model and the demand pmfs it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryModel {
    pub spec: InventorySpec,
    pub mdp: ModePairMdp,
    pub demand_pre: Vec<f64>,
    pub demand_post: Vec<f64>,
}

impl InventoryModel {
    pub fn demand(&self, mode: Mode) -> &[f64] {
        match mode {
            Mode::Pre => &self.demand_pre,
            Mode::Post => &self.demand_post,
        }
    }
}

/// States and actions `0..=N`; `X' = max(0, min(x+u, N) - W)`; stage costs
/// are expectations over the mode's demand.
pub fn build_inventory(spec: &InventorySpec) -> Result<InventoryModel> {
    spec.validate()?;
    let n = spec.capacity + 1;
    let demand_pre = spec.demand(Mode::Pre);
    let demand_post = spec.demand(Mode::Post);
    let kernel = |pmf: &[f64]| -> Result<Kernel> {
        let mut probs = vec![0.0; n * n * n];
        for x in 0..n {
            for u in 0..n {
                let level = (x + u).min(spec.capacity);
                let row = &mut probs[(x * n + u) * n..(x * n + u + 1) * n];
                for (w, &p) in pmf.iter().enumerate() {
                    row[level.saturating_sub(w)] += p;
                }
            }
        }
        Kernel::new(n, n, probs)
    };
    let costs = |pmf: &[f64]| -> Result<CostTable> {
        let table = (0..n).flat_map(|x| (0..n).map(move |u| (x, u))).map(|(x, u)| expected_cost(spec, pmf, x, u)).collect();
        CostTable::new(n, n, table)
    };
    let mdp = ModePairMdp::with_mode_costs(
        kernel(&demand_pre)?,
        kernel(&demand_post)?,
        costs(&demand_pre)?,
        costs(&demand_post)?,
        spec.discount,
        spec.change_rate,
    )?;
    Ok(InventoryModel { spec: *spec, mdp, demand_pre, demand_post })
}

fn expected_cost(spec: &InventorySpec, pmf: &[f64], x: usize, u: usize) -> f64 {
    pmf.iter().enumerate().map(|(w, p)| p * spec.stage_cost(x, u, w)).sum()
}

/// `c_{i|j}(x) = E_j[c(x, π_i(x))]` over the mode-`j` demand.
pub fn inventory_expected_stage_costs(spec: &InventorySpec, policy: &DeterministicPolicy, mode: Mode) -> Result<Vec<f64>> {
    spec.validate()?;
    if policy.len() != spec.capacity + 1 {
        return Err(Error::InvalidArgument("policy does not cover the inventory levels".into()));
    }
    let pmf = spec.demand(mode);
    Ok((0..policy.len()).map(|x| expected_cost(spec, &pmf, x, policy.action(x))).collect())
}
