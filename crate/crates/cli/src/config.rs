//! Experiment configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use switchqcd::environments::{build_inventory, gen_random_mdp, InventorySpec, RandomMdpSpec};
use switchqcd::mdp::{CostTable, Kernel, ModePairMdp};
use switchqcd::pipeline::SolveOptions;
use switchqcd::qcd::FixedPointOptions;
use switchqcd::mdp::ValueIterationOptions;

use crate::error::CliError;

/// Kernels and costs given inline, `[x][u][x']` and `[x][u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomKernels {
    pub kernel_pre: Vec<Vec<Vec<f64>>>,
    pub kernel_post: Vec<Vec<Vec<f64>>>,
    pub stage_cost: Vec<Vec<f64>>,
    /// Post-change expected stage cost, when it differs.
    #[serde(default)]
    pub stage_cost_post: Option<Vec<Vec<f64>>>,
    pub discount: f64,
    pub change_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvironmentConfig {
    RandomMdp(RandomMdpSpec),
    Inventory(InventorySpec),
    CustomKernels(CustomKernels),
}

impl EnvironmentConfig {
    pub fn build(&self) -> switchqcd::Result<ModePairMdp> {
        match self {
            EnvironmentConfig::RandomMdp(spec) => gen_random_mdp(spec),
            EnvironmentConfig::Inventory(spec) => Ok(build_inventory(spec)?.mdp),
            EnvironmentConfig::CustomKernels(c) => {
                let cost_pre = CostTable::from_nested(&c.stage_cost)?;
                let cost_post = match &c.stage_cost_post {
                    Some(post) => CostTable::from_nested(post)?,
                    None => cost_pre.clone(),
                };
                ModePairMdp::with_mode_costs(
                    Kernel::from_nested(&c.kernel_pre)?,
                    Kernel::from_nested(&c.kernel_post)?,
                    cost_pre,
                    cost_post,
                    c.discount,
                    c.change_rate,
                )
            }
        }
    }

    pub fn change_rate(&self) -> f64 {
        match self {
            EnvironmentConfig::RandomMdp(s) => s.change_rate,
            EnvironmentConfig::Inventory(s) => s.change_rate,
            EnvironmentConfig::CustomKernels(c) => c.change_rate,
        }
    }

    /// `⌈2/ρ⌉` for random MDPs, 1000 otherwise.
    pub fn default_horizon(&self, rho: f64) -> u64 {
        match self {
            EnvironmentConfig::RandomMdp(_) => (2.0 / rho).ceil() as u64,
            _ => 1000,
        }
    }

    /// Default belief-grid size: 1000 for random MDPs, 100 for inventory.
    fn default_grid(&self) -> usize {
        match self {
            EnvironmentConfig::Inventory(_) => 100,
            _ => 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default)]
    pub value_iteration: Option<ValueIterationOptions>,
    #[serde(default)]
    pub fixed_point: Option<FixedPointOptions>,
    /// Change rates to solve and simulate; defaults to the environment's.
    #[serde(default)]
    pub rho_sweep: Option<Vec<f64>>,
    #[serde(default = "default_episodes")]
    pub n_episodes: usize,
    /// Simulation horizon; see [`EnvironmentConfig::default_horizon`].
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Largest `t` (and `k`) for the mixing report.
    #[serde(default = "default_mixing_horizon")]
    pub mixing_horizon: usize,
    /// Also write one row per simulated episode.
    #[serde(default)]
    pub episode_csv: bool,
}

fn default_episodes() -> usize {
    1000
}

fn default_mixing_horizon() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for &rho in &self.rhos() {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(CliError::Config(format!("change rate {rho} not in (0, 1)")));
            }
        }
        if self.rho_sweep.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Config("rho_sweep is empty".into()));
        }
        if self.grid_size.is_some_and(|g| g < 2) {
            return Err(CliError::Config("grid_size must be at least 2".into()));
        }
        if self.horizon == Some(0) {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        if self.mixing_horizon == 0 {
            return Err(CliError::Config("mixing_horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.rho_sweep.clone().unwrap_or_else(|| vec![self.environment.change_rate()])
    }

    pub fn horizon_for(&self, rho: f64) -> u64 {
        self.horizon.unwrap_or_else(|| self.environment.default_horizon(rho))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            value_iteration: self.value_iteration.unwrap_or_default(),
            fixed_point: self.fixed_point.unwrap_or_default(),
            grid_size: self.grid_size.unwrap_or_else(|| self.environment.default_grid()),
        }
    }
}
