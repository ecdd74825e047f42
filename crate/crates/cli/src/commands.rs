//! The four subcommands. Each writes CSV tables and a `manifest.json` into
//! the output directory and returns the paths it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use switchqcd::chain::{mixing_profile, verify_mixing_bound};
use switchqcd::mdp::{Mode, ModePairMdp};
use switchqcd::pipeline::{analyze_modes, AtStage, ModeAnalysis, SolvedSwitching, Stage};
use switchqcd::sim::{run_experiment, SimConfig, SimReport};

use crate::cells;
use crate::config::{EnvironmentConfig, ExperimentConfig};
use crate::csv::Table;
use crate::error::CliError;

/// A validated config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl RunContext {
    pub fn new(mut config: ExperimentConfig, seed: Option<u64>, out_dir: Option<PathBuf>, workers: usize) -> Result<Self, CliError> {
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let out_dir = out_dir
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| CliError::Config("no output directory (use --out or output_dir)".into()))?;
        config.validate()?;
        Ok(RunContext { config, out_dir, workers })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> Result<(ModePairMdp, ModeAnalysis), CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Io { path: self.out_dir.display().to_string(), source })?;
        let mdp = self.config.environment.build().at(Stage::Environment)?;
        let analysis = analyze_modes(&mdp, &self.config.solve_options().value_iteration)?;
        Ok((mdp, analysis))
    }

    fn solve_all(&self, analysis: &ModeAnalysis) -> Result<Vec<SolvedSwitching>, CliError> {
        let opts = self.config.solve_options();
        self.config.rhos().into_iter().map(|rho| Ok(analysis.solve_switching(rho, &opts)?)).collect()
    }

    fn simulate(&self, analysis: &ModeAnalysis, solved: &SolvedSwitching) -> Result<SimReport, CliError> {
        if self.config.n_episodes == 0 {
            return Err(CliError::Config("no episodes requested".into()));
        }
        let setup = analysis.setup(solved)?;
        let sim = SimConfig {
            n_episodes: self.config.n_episodes,
            horizon: self.config.horizon_for(solved.mdp.change_rate()),
            master_seed: self.config.seed,
            workers: self.workers,
        };
        Ok(run_experiment(&setup, &sim).at(Stage::Simulation)?)
    }
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    rho: f64,
    lambda: f64,
    lambda_numerator: f64,
    lambda_denominator: f64,
    fixed_point_iterations: usize,
    fixed_point_residual: f64,
    grid_slack: f64,
    value_at_zero: f64,
    thresholds: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct PolicySummary {
    mode: usize,
    iterations: usize,
    residual: f64,
    actions: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    policies: Vec<PolicySummary>,
    solves: Vec<SolveSummary>,
    outputs: Vec<String>,
}

fn write_manifest(ctx: &RunContext, command: &'static str, analysis: &ModeAnalysis, solved: &[SolvedSwitching], outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let inputs = analysis.lambda_inputs;
    let manifest = Manifest {
        tool: "switchqcd",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: ctx.config.seed,
        config: &ctx.config,
        policies: [(1, &analysis.pre), (2, &analysis.post)]
            .into_iter()
            .map(|(mode, o)| PolicySummary { mode, iterations: o.iterations, residual: o.residual, actions: o.policy.action_of.clone() })
            .collect(),
        solves: solved
            .iter()
            .map(|s| SolveSummary {
                rho: s.mdp.change_rate(),
                lambda: s.lambda,
                lambda_numerator: inputs.numerator(),
                lambda_denominator: inputs.denominator(),
                fixed_point_iterations: s.solution.iterations,
                fixed_point_residual: s.solution.residual,
                grid_slack: s.problem.grid_slack(),
                value_at_zero: s.value_at_zero(),
                thresholds: s.rule.threshold.clone(),
            })
            .collect(),
        outputs: outputs.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
    };
    let path = ctx.path("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

fn finish(ctx: &RunContext, command: &'static str, analysis: &ModeAnalysis, solved: &[SolvedSwitching], tables: Vec<(&str, Table)>) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for (name, table) in tables {
        let path = ctx.path(name);
        table.write(&path)?;
        paths.push(path);
    }
    let manifest = write_manifest(ctx, command, analysis, solved, &paths)?;
    paths.push(manifest);
    Ok(paths)
}

fn mode_index(mode: Mode) -> usize {
    mode.number()
}

/// Policies, stationary distributions, `λ`, value tables and thresholds.
pub fn cmd_solve(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    let (mdp, analysis) = ctx.prepare()?;
    let solved = ctx.solve_all(&analysis)?;

    let mut policies = Table::new(&["mode", "state", "action", "value"]);
    for (mode, outcome) in [(1usize, &analysis.pre), (2, &analysis.post)] {
        for x in 0..mdp.n_states() {
            policies.row(cells![mode, x, outcome.policy.action(x), outcome.values.values[x]]);
        }
    }
    let mut stationary = Table::new(&["policy", "kernel", "state", "probability"]);
    for i in Mode::BOTH {
        for j in Mode::BOTH {
            let dist = &analysis.stationary[mode_index(i) - 1][mode_index(j) - 1];
            for (x, &p) in dist.dist.iter().enumerate() {
                stationary.row(cells![mode_index(i), mode_index(j), x, p]);
            }
        }
    }
    let inputs = analysis.lambda_inputs;
    let mut lambda = Table::new(&["rho", "lambda", "avg_cost_21", "avg_cost_11", "avg_cost_12", "avg_cost_22", "numerator", "denominator"]);
    let mut thresholds = Table::new(&["rho", "state", "threshold"]);
    let mut values = Table::new(&["rho", "state", "p", "value"]);
    for s in &solved {
        let rho = s.mdp.change_rate();
        lambda.row(cells![
            rho,
            s.lambda,
            inputs.avg_cost_21,
            inputs.avg_cost_11,
            inputs.avg_cost_12,
            inputs.avg_cost_22,
            inputs.numerator(),
            inputs.denominator()
        ]);
        for (x, &t) in s.rule.threshold.iter().enumerate() {
            thresholds.row(cells![rho, x, t]);
        }
        let table = &s.solution.table;
        for x in 0..table.n_states() {
            for (i, &p) in table.grid.points().iter().enumerate() {
                values.row(cells![rho, x, p, table.get(i, x)]);
            }
        }
    }
    finish(
        ctx,
        "solve",
        &analysis,
        &solved,
        vec![
            ("policies.csv", policies),
            ("stationary.csv", stationary),
            ("lambda.csv", lambda),
            ("thresholds.csv", thresholds),
            ("values.csv", values),
        ],
    )
}

/// One report row per change rate.
pub fn cmd_simulate(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    if ctx.config.n_episodes == 0 {
        return Err(CliError::Config("no episodes requested".into()));
    }
    let (_, analysis) = ctx.prepare()?;
    let solved = ctx.solve_all(&analysis)?;
    let (capacity, lost_sales) = match &ctx.config.environment {
        EnvironmentConfig::Inventory(spec) => (Some(spec.capacity), Some(spec.lost_sales_cost)),
        _ => (None, None),
    };
    let mut report = Table::new(&[
        "rho",
        "capacity",
        "lost_sales_cost",
        "lambda",
        "n_episodes",
        "horizon",
        "J_MO",
        "J_CD",
        "stderr_MO",
        "stderr_CD",
        "PFA",
        "stderr_PFA",
        "mean_delay",
        "mean_undershoot",
        "approx_regret",
        "exact_regret",
        "stderr_exact_regret",
        "t_stat",
        "welch_df",
        "never_triggered",
        "truncation_bound",
    ]);
    let mut episodes = Table::new(&[
        "rho",
        "episode",
        "initial_state",
        "change_point",
        "switch_time",
        "triggered",
        "cost_cd",
        "cost_mo",
        "exact_regret",
        "decomposed_regret",
    ]);
    for s in &solved {
        let r = ctx.simulate(&analysis, s)?;
        let rho = s.mdp.change_rate();
        report.row(cells![
            rho,
            capacity,
            lost_sales,
            s.lambda,
            r.n_episodes,
            r.horizon,
            r.cost_mo.mean,
            r.cost_cd.mean,
            r.cost_mo.stderr,
            r.cost_cd.stderr,
            r.false_alarm.mean,
            r.false_alarm.stderr,
            r.delay.mean,
            r.undershoot.mean,
            r.approx_regret.mean,
            r.exact_regret.mean,
            r.exact_regret.stderr,
            r.welch_t,
            r.welch_df,
            r.never_triggered,
            r.truncation_bound
        ]);
        if ctx.config.episode_csv {
            for e in &r.episodes {
                episodes.row(cells![
                    rho,
                    e.index,
                    e.initial_state,
                    e.change_point,
                    e.switch_time,
                    u64::from(e.triggered),
                    e.discounted_cost_cd,
                    e.discounted_cost_mo,
                    e.exact_regret,
                    e.decomposed_regret
                ]);
            }
        }
    }
    let mut tables = vec![("report.csv", report)];
    if ctx.config.episode_csv {
        tables.push(("episodes.csv", episodes));
    }
    finish(ctx, "simulate", &analysis, &solved, tables)
}

/// Thresholds per state and false-alarm probability, per change rate.
pub fn cmd_figure1(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    if ctx.config.n_episodes == 0 {
        return Err(CliError::Config("no episodes requested".into()));
    }
    let (_, analysis) = ctx.prepare()?;
    let solved = ctx.solve_all(&analysis)?;
    let mut thresholds = Table::new(&["rho", "state", "threshold"]);
    let mut pfa = Table::new(&["rho", "pfa", "stderr"]);
    for s in &solved {
        let rho = s.mdp.change_rate();
        for (x, &t) in s.rule.threshold.iter().enumerate() {
            thresholds.row(cells![rho, x, t]);
        }
        let r = ctx.simulate(&analysis, s)?;
        pfa.row(cells![rho, r.false_alarm.mean, r.false_alarm.stderr]);
    }
    finish(ctx, "figure1", &analysis, &solved, vec![("thresholds.csv", thresholds), ("pfa.csv", pfa)])
}

/// TV profiles, fitted envelopes and mixing-bound slack of the four chains.
pub fn cmd_mixing(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    let (mdp, analysis) = ctx.prepare()?;
    let t_max = ctx.config.mixing_horizon;
    let mut profile_table = Table::new(&["policy", "kernel", "t", "tv"]);
    let mut summary = Table::new(&["policy", "kernel", "envelope_b", "envelope_beta", "min_slack", "max_slack", "min_slack_intermediate", "largest_gap"]);
    for i in Mode::BOTH {
        for j in Mode::BOTH {
            let chain = analysis.chains.get(i, j);
            let profile = mixing_profile(chain, t_max).at(Stage::ChainAnalysis)?;
            for (t, &d) in profile.tv_by_step.iter().enumerate() {
                profile_table.row(cells![mode_index(i), mode_index(j), t, d]);
            }
            let report = verify_mixing_bound(chain, mdp.discount(), t_max).at(Stage::ChainAnalysis)?;
            summary.row(cells![
                mode_index(i),
                mode_index(j),
                report.envelope_b,
                report.envelope_beta,
                report.min_slack,
                report.max_slack,
                report.min_slack_intermediate,
                report.largest_gap
            ]);
        }
    }
    finish(ctx, "mixing", &analysis, &[], vec![("mixing.csv", profile_table), ("mixing_summary.csv", summary)])
}

/// Reads a CSV written by this crate back into rows of fields.
pub fn read_table(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect())
}
