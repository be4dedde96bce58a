//! Scenario runs and their result files.
//!
//! Each `(algorithm, UE count, mobility fraction)` triple gets its own
//! directory `<algorithm>-ues<N>-mob<F>` holding, for all seeds:
//!
//! * `rewards.csv`, per training episode (CDQL only);
//! * `kpis.csv`, per agent step;
//! * `final.csv`, one row per seed aggregated over the evaluation episode;
//! * `manifest.json`, the resolved configuration of the scenario.
//!
//! The evaluation episode has index `episodes`, so it is never one of the
//! training episodes. CDQL plays it greedily; the baselines play only that
//! episode, which gives every algorithm identical traffic and placement.

use std::fs;
use std::path::{Path, PathBuf};

use mlb_core::agent::CdqlAgent;
use mlb_core::env::{
    evaluate_greedy, reward_breakdown, run_baseline, run_training, BalancerEnv, EpisodeLog,
    StepOutcome,
};
use mlb_core::metrics::KpiWindow;
use mlb_core::sim::{HandoverPolicy, SimConfig, Simulation};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{ActionConfig, Algorithm, LabConfig};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub algorithm: Algorithm,
    pub n_ues: usize,
    pub mobility_fraction: f64,
}

impl ScenarioKey {
    pub fn dir_name(&self) -> String {
        format!(
            "{}-ues{}-mob{}",
            self.algorithm, self.n_ues, self.mobility_fraction
        )
    }
}

/// Scenarios in plan order: algorithm, then UE count, then mobility.
pub fn scenarios(cfg: &LabConfig) -> Vec<ScenarioKey> {
    let p = &cfg.plan;
    let mut out = Vec::new();
    for &algorithm in &p.algorithms {
        for &n_ues in &p.ue_counts {
            for &mobility_fraction in &p.mobility_fractions {
                out.push(ScenarioKey {
                    algorithm,
                    n_ues,
                    mobility_fraction,
                });
            }
        }
    }
    out
}

pub fn scenario_sim_config(cfg: &LabConfig, key: &ScenarioKey) -> SimConfig {
    SimConfig {
        n_ues: key.n_ues,
        mobility_fraction: key.mobility_fraction,
        speed_mps: cfg.plan.speed_mps,
        policy: match key.algorithm {
            Algorithm::Rebuha => HandoverPolicy::Rebuha {
                gamma_rb: cfg.reward.gamma_rb,
            },
            Algorithm::Cdql | Algorithm::A3 => HandoverPolicy::A3,
        },
        ..cfg.sim.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episode: u64,
    pub cumulative_reward: f64,
    pub epsilon: f64,
    pub mean_r_delay: f64,
    pub mean_r_rbu: f64,
    pub mean_r_cqi: f64,
}

impl RewardRow {
    fn new(algorithm: Algorithm, seed: u64, log: &EpisodeLog) -> Self {
        Self {
            algorithm,
            seed,
            episode: log.episode,
            cumulative_reward: log.cumulative_reward,
            epsilon: log.epsilon,
            mean_r_delay: log.mean_r_delay,
            mean_r_rbu: log.mean_r_rbu,
            mean_r_cqi: log.mean_r_cqi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

/// Per-cell columns hold `;`-separated values in cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRow {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub phase: Phase,
    pub episode: u64,
    pub step: usize,
    pub start_ms: u64,
    pub throughput_bps: f64,
    pub mean_ue_throughput_bps: f64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub plr: f64,
    pub handovers: u32,
    pub disconnected: usize,
    pub reward: f64,
    pub cio_db: String,
    pub rbu: String,
    pub attached: String,
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

impl KpiRow {
    #[allow(clippy::too_many_arguments)]
    fn new(
        algorithm: Algorithm,
        seed: u64,
        phase: Phase,
        episode: u64,
        step: usize,
        kpi: &KpiWindow,
        reward: f64,
        cio_db: &[f64],
    ) -> Self {
        Self {
            algorithm,
            seed,
            phase,
            episode,
            step,
            start_ms: kpi.start_ms,
            throughput_bps: kpi.throughput_bps,
            mean_ue_throughput_bps: kpi.mean_ue_throughput_bps,
            mean_delay_ms: kpi.mean_delay_ms,
            jitter_ms: kpi.jitter_ms,
            plr: kpi.plr,
            handovers: kpi.handovers,
            disconnected: kpi.disconnected(),
            reward,
            cio_db: join(cio_db),
            rbu: join(kpi.rbu_vector()),
            attached: join(kpi.cells.iter().map(|c| c.attached)),
        }
    }
}

/// Evaluation-episode aggregate. Rates and delays are means over the
/// episode's windows; PLR pools packets over the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub algorithm: Algorithm,
    pub n_ues: usize,
    pub mobility_fraction: f64,
    pub seed: u64,
    pub episode: u64,
    pub steps: usize,
    pub throughput_bps: f64,
    pub mean_ue_throughput_bps: f64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub plr: f64,
    pub handovers: u64,
    pub disconnected_at_end: usize,
    pub cumulative_reward: f64,
}

impl FinalRow {
    pub fn from_windows(
        key: &ScenarioKey,
        seed: u64,
        episode: u64,
        windows: &[KpiWindow],
        rewards: &[f64],
    ) -> Self {
        let n = windows.len().max(1) as f64;
        let mean = |f: fn(&KpiWindow) -> f64| windows.iter().map(f).sum::<f64>() / n;
        let (generated, failed) = windows
            .iter()
            .flat_map(|w| &w.ues)
            .fold((0u64, 0u64), |(g, f), u| {
                (g + u.generated, f + u.dropped + u.lost)
            });
        Self {
            algorithm: key.algorithm,
            n_ues: key.n_ues,
            mobility_fraction: key.mobility_fraction,
            seed,
            episode,
            steps: windows.len(),
            throughput_bps: mean(|w| w.throughput_bps),
            mean_ue_throughput_bps: mean(|w| w.mean_ue_throughput_bps),
            mean_delay_ms: mean(|w| w.mean_delay_ms),
            jitter_ms: mean(|w| w.jitter_ms),
            plr: mlb_core::metrics::plr(generated, failed, 0),
            handovers: windows.iter().map(|w| w.handovers as u64).sum(),
            disconnected_at_end: windows.last().map_or(0, KpiWindow::disconnected),
            cumulative_reward: rewards.iter().sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub key: ScenarioKey,
    pub seed: u64,
    pub rewards: Vec<RewardRow>,
    pub kpis: Vec<KpiRow>,
    pub final_row: FinalRow,
    pub checkpoint: Option<Checkpoint>,
}

fn kpi_rows<'a>(
    key: &ScenarioKey,
    seed: u64,
    phase: Phase,
    episode: u64,
    outcomes: &'a [StepOutcome],
) -> impl Iterator<Item = KpiRow> + 'a {
    let alg = key.algorithm;
    outcomes.iter().enumerate().map(move |(step, o)| {
        KpiRow::new(
            alg,
            seed,
            phase,
            episode,
            step,
            &o.kpi,
            o.reward.total,
            &o.cio_db,
        )
    })
}

pub fn build_env(cfg: &LabConfig, key: &ScenarioKey, seed: u64) -> Result<BalancerEnv> {
    let sim = Simulation::new(scenario_sim_config(cfg, key), seed)?;
    Ok(BalancerEnv::new(
        sim,
        cfg.action_space()?,
        cfg.reward.clone(),
    )?)
}

pub fn build_agent(cfg: &LabConfig, env: &BalancerEnv, seed: u64) -> Result<CdqlAgent> {
    Ok(CdqlAgent::new(
        cfg.agent.clone(),
        env.state_len(),
        env.space().size(),
        seed,
    )?)
}

/// One seed of one scenario.
pub fn run_one(cfg: &LabConfig, key: &ScenarioKey, seed: u64) -> Result<RunOutput> {
    let episodes = cfg.plan.episodes;
    let steps = cfg.plan.steps_per_episode;
    let mut rewards = Vec::new();
    let mut kpis = Vec::new();
    let eval_windows: Vec<KpiWindow>;
    let eval_rewards: Vec<f64>;
    let mut checkpoint = None;
    match key.algorithm {
        Algorithm::Cdql => {
            let mut env = build_env(cfg, key, seed)?;
            let mut agent = build_agent(cfg, &env, seed)?;
            run_training(&mut env, &mut agent, episodes, steps, |log, outcomes| {
                rewards.push(RewardRow::new(key.algorithm, seed, log));
                kpis.extend(kpi_rows(key, seed, Phase::Train, log.episode, outcomes));
            })?;
            let (_, outcomes) = evaluate_greedy(&mut env, &agent, episodes, steps)?;
            kpis.extend(kpi_rows(key, seed, Phase::Eval, episodes, &outcomes));
            eval_rewards = outcomes.iter().map(|o| o.reward.total).collect();
            eval_windows = outcomes.into_iter().map(|o| o.kpi).collect();
            if cfg.plan.save_checkpoints {
                checkpoint = Some(Checkpoint::from_agent(&agent, seed));
            }
        }
        Algorithm::A3 | Algorithm::Rebuha => {
            let mut sim = Simulation::new(scenario_sim_config(cfg, key), seed)?;
            let windows = run_baseline(&mut sim, episodes, steps)?;
            let zeros = vec![0.0; cfg.sim.n_cells];
            eval_rewards = windows
                .iter()
                .map(|w| reward_breakdown(w, &cfg.reward).total)
                .collect();
            for (step, (w, r)) in windows.iter().zip(&eval_rewards).enumerate() {
                kpis.push(KpiRow::new(
                    key.algorithm,
                    seed,
                    Phase::Eval,
                    episodes,
                    step,
                    w,
                    *r,
                    &zeros,
                ));
            }
            eval_windows = windows;
        }
    }
    let final_row = FinalRow::from_windows(key, seed, episodes, &eval_windows, &eval_rewards);
    Ok(RunOutput {
        key: *key,
        seed,
        rewards,
        kpis,
        final_row,
        checkpoint,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: ScenarioKey,
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub steps_per_episode: usize,
    pub sim: SimConfig,
    pub agent: Option<mlb_core::agent::AgentConfig>,
    pub reward: mlb_core::env::RewardConfig,
    pub action: Option<ActionConfig>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| LabError::csv(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| LabError::csv(path, e))
}

/// Writes one scenario directory; `runs` must be in seed order.
pub fn write_scenario(cfg: &LabConfig, dir: &Path, runs: &[RunOutput]) -> Result<()> {
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let key = first.key;
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let learning = key.algorithm == Algorithm::Cdql;
    if learning {
        let rows: Vec<&RewardRow> = runs.iter().flat_map(|r| &r.rewards).collect();
        write_csv(&dir.join("rewards.csv"), &rows)?;
    }
    let rows: Vec<&KpiRow> = runs.iter().flat_map(|r| &r.kpis).collect();
    write_csv(&dir.join("kpis.csv"), &rows)?;
    let rows: Vec<&FinalRow> = runs.iter().map(|r| &r.final_row).collect();
    write_csv(&dir.join("final.csv"), &rows)?;
    let manifest = Manifest {
        scenario: key,
        seeds: runs.iter().map(|r| r.seed).collect(),
        episodes: cfg.plan.episodes,
        steps_per_episode: cfg.plan.steps_per_episode,
        sim: scenario_sim_config(cfg, &key),
        agent: learning.then(|| cfg.agent.clone()),
        reward: cfg.reward.clone(),
        action: learning.then(|| cfg.action.clone()),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| LabError::io(&path, e))?;
    for run in runs {
        if let Some(ck) = &run.checkpoint {
            ck.save(&dir.join(format!("checkpoint-seed{}.json", run.seed)))?;
        }
    }
    Ok(())
}

/// Runs every `(scenario, seed)` pair in parallel and writes the scenario
/// directories under the plan's output directory. `on_done` is called as
/// each run finishes, in completion order. Returns the directories written.
pub fn run_experiment(
    cfg: &LabConfig,
    on_done: impl Fn(&ScenarioKey, u64) + Sync,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let out = &cfg.plan.output_dir;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let keys = scenarios(cfg);
    let jobs: Vec<(usize, u64)> = (0..keys.len())
        .flat_map(|k| cfg.plan.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let results: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let r = run_one(cfg, &keys[k], seed);
            on_done(&keys[k], seed);
            r
        })
        .collect::<Result<_>>()?;
    let per_key = cfg.plan.seeds.len();
    let mut dirs = Vec::with_capacity(keys.len());
    for (key, runs) in keys.iter().zip(results.chunks(per_key)) {
        let dir = out.join(key.dir_name());
        write_scenario(cfg, &dir, runs)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_names() {
        let key = ScenarioKey {
            algorithm: Algorithm::Rebuha,
            n_ues: 45,
            mobility_fraction: 0.1,
        };
        assert_eq!(key.dir_name(), "rebuha-ues45-mob0.1");
        let key = ScenarioKey {
            algorithm: Algorithm::Cdql,
            n_ues: 30,
            mobility_fraction: 0.0,
        };
        assert_eq!(key.dir_name(), "cdql-ues30-mob0");
    }

    #[test]
    fn scenario_config_follows_the_plan() {
        let mut cfg = LabConfig::default();
        cfg.plan.speed_mps = 5.0;
        let key = ScenarioKey {
            algorithm: Algorithm::Rebuha,
            n_ues: 40,
            mobility_fraction: 0.2,
        };
        let sim = scenario_sim_config(&cfg, &key);
        assert_eq!(sim.n_ues, 40);
        assert_eq!(sim.mobility_fraction, 0.2);
        assert_eq!(sim.speed_mps, 5.0);
        assert_eq!(sim.policy, HandoverPolicy::Rebuha { gamma_rb: 0.6 });
    }

    #[test]
    fn final_row_pools_packets() {
        let key = ScenarioKey {
            algorithm: Algorithm::A3,
            n_ues: 30,
            mobility_fraction: 0.0,
        };
        let cfg = SimConfig {
            step_ms: 100,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(cfg, 1).unwrap();
        let windows = run_baseline(&mut sim, 0, 3).unwrap();
        let row = FinalRow::from_windows(&key, 1, 0, &windows, &[1.0, 2.0, 0.5]);
        assert_eq!(row.steps, 3);
        assert_eq!(row.cumulative_reward, 3.5);
        let tp = windows.iter().map(|w| w.throughput_bps).sum::<f64>() / 3.0;
        assert_eq!(row.throughput_bps, tp);
        assert!((0.0..=1.0).contains(&row.plr));
    }
}
