//! Load-balancing environment: CIO actions in, KPI-derived state and reward out.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::agent::{CdqlAgent, Transition};
use crate::error::{Error, Result};
use crate::metrics::KpiWindow;
use crate::sim::Simulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionMode {
    /// Ordered selections without repetition.
    #[default]
    Permutations,
    /// Every cell picks any offset independently.
    Product,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ActionSpace {
    cio_values: Vec<f64>,
    k: usize,
    mode: ActionMode,
    size: usize,
}

pub const DEFAULT_CIO_VALUES: [f64; 7] = [-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0];

impl ActionSpace {
    pub fn new(cio_values: Vec<f64>, k: usize, mode: ActionMode) -> Result<Self> {
        let l = cio_values.len();
        if l == 0 || k == 0 {
            return Err(Error::invalid(
                "action space",
                "needs at least one offset and one cell",
            ));
        }
        if cio_values.iter().any(|v| !v.is_finite()) || cio_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "cio_values",
                "must be finite and strictly ascending",
            ));
        }
        let size = match mode {
            ActionMode::Permutations => {
                if k > l {
                    return Err(Error::invalid("action space", "more cells than offsets"));
                }
                (l - k + 1..=l).try_fold(1usize, |acc, f| acc.checked_mul(f))
            }
            ActionMode::Product => (0..k).try_fold(1usize, |acc, _| acc.checked_mul(l)),
        }
        .ok_or_else(|| Error::invalid("action space", "size overflows"))?;
        Ok(Self {
            cio_values,
            k,
            mode,
            size,
        })
    }

    pub fn default_for(k: usize) -> Result<Self> {
        Self::new(DEFAULT_CIO_VALUES.to_vec(), k, ActionMode::Permutations)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn cio_values(&self) -> &[f64] {
        &self.cio_values
    }

    /// Positions into `cio_values` for action `index`.
    pub fn decode_positions(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.size {
            return Err(Error::OutOfRange {
                what: "action index",
                index,
                bound: self.size,
            });
        }
        let l = self.cio_values.len();
        let mut out = Vec::with_capacity(self.k);
        match self.mode {
            ActionMode::Product => {
                let mut rest = index;
                let mut radix = self.size;
                for _ in 0..self.k {
                    radix /= l;
                    out.push(rest / radix);
                    rest %= radix;
                }
            }
            ActionMode::Permutations => {
                let mut free: Vec<usize> = (0..l).collect();
                let mut rest = index;
                let mut block = self.size;
                for i in 0..self.k {
                    block /= l - i;
                    let pick = rest / block;
                    rest %= block;
                    out.push(free.remove(pick));
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, index: usize) -> Result<Vec<f64>> {
        Ok(self
            .decode_positions(index)?
            .into_iter()
            .map(|p| self.cio_values[p])
            .collect())
    }

    /// Inverse of [`decode`](Self::decode); values must match entries exactly.
    pub fn encode(&self, cio: &[f64]) -> Result<usize> {
        if cio.len() != self.k {
            return Err(Error::ShapeMismatch {
                what: "cio vector",
                expected: self.k,
                got: cio.len(),
            });
        }
        let l = self.cio_values.len();
        let mut positions = Vec::with_capacity(self.k);
        for v in cio {
            match self.cio_values.iter().position(|c| c == v) {
                Some(p) => positions.push(p),
                None => {
                    return Err(Error::invalid(
                        "cio vector",
                        alloc::format!("{v} is not an allowed offset"),
                    ))
                }
            }
        }
        match self.mode {
            ActionMode::Product => Ok(positions.iter().fold(0, |acc, &p| acc * l + p)),
            ActionMode::Permutations => {
                let mut free: Vec<usize> = (0..l).collect();
                let mut index = 0;
                let mut block = self.size;
                for (i, p) in positions.into_iter().enumerate() {
                    block /= l - i;
                    let rank = free
                        .iter()
                        .position(|&f| f == p)
                        .ok_or_else(|| Error::invalid("cio vector", "repeats an offset"))?;
                    free.remove(rank);
                    index += rank * block;
                }
                Ok(index)
            }
        }
    }
}

/// CQI-to-reward banding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CqiBanding {
    /// ≤6 → −1, 7..=9 → 0, ≥10 → +1.
    #[default]
    Monotone,
    /// <6 → −1, 7..=9 → 0, anything else → +1.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RewardConfig {
    pub weights: [f64; 3],
    pub c: f64,
    /// Delay slope, per second.
    pub o: f64,
    pub pdb_ms: f64,
    pub a: f64,
    pub d_target: f64,
    pub gamma_rb: f64,
    pub cqi_banding: CqiBanding,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            c: -2.0,
            o: 75.0,
            pdb_ms: 150.0,
            a: 20.0,
            d_target: 0.6,
            gamma_rb: 0.6,
            cqi_banding: CqiBanding::Monotone,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pdb_ms > 0.0 && self.pdb_ms.is_finite()) {
            return Err(Error::invalid("pdb_ms", "must be positive"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "must be finite"));
        }
        let finite = [
            ("c", self.c),
            ("o", self.o),
            ("a", self.a),
            ("d_target", self.d_target),
        ];
        for (what, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(what, "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma_rb) {
            return Err(Error::invalid("gamma_rb", "outside [0, 1]"));
        }
        Ok(())
    }

    /// Target delay in seconds, two thirds of the delay budget.
    pub fn target_delay_s(&self) -> f64 {
        self.pdb_ms * 2.0 / 3.0 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RewardBreakdown {
    pub r_delay: f64,
    pub r_rbu: f64,
    pub r_cqi: f64,
    pub total: f64,
}

fn sigmoid_reward(c: f64, slope: f64, x: f64, mid: f64) -> f64 {
    1.0 + c / (1.0 + libm::exp(-slope * (x - mid)))
}

/// Mean per-UE delay term; `per_ue` holds `(connected, mean delay in s)`.
pub fn reward_delay(per_ue: &[(bool, f64)], cfg: &RewardConfig) -> f64 {
    if per_ue.is_empty() {
        return 0.0;
    }
    let f = cfg.target_delay_s();
    let sum: f64 = per_ue
        .iter()
        .map(|&(connected, d)| {
            if connected {
                sigmoid_reward(cfg.c, cfg.o, d, f)
            } else {
                -1.0
            }
        })
        .sum();
    sum / per_ue.len() as f64
}

/// Utilization term driven by the busiest cell.
pub fn reward_rbu(rbu: &[f64], cfg: &RewardConfig) -> f64 {
    let max = rbu.iter().copied().fold(0.0, f64::max);
    sigmoid_reward(cfg.c, cfg.a, max, cfg.d_target)
}

pub fn cqi_band(cqi: u8, banding: CqiBanding) -> f64 {
    match banding {
        CqiBanding::Monotone => match cqi {
            0..=6 => -1.0,
            7..=9 => 0.0,
            _ => 1.0,
        },
        CqiBanding::Literal => match cqi {
            0..=5 => -1.0,
            7..=9 => 0.0,
            _ => 1.0,
        },
    }
}

pub fn reward_cqi(cqis: &[u8], cfg: &RewardConfig) -> f64 {
    if cqis.is_empty() {
        return 0.0;
    }
    cqis.iter()
        .map(|&c| cqi_band(c, cfg.cqi_banding))
        .sum::<f64>()
        / cqis.len() as f64
}

pub fn reward_breakdown(kpi: &KpiWindow, cfg: &RewardConfig) -> RewardBreakdown {
    let delays: Vec<(bool, f64)> = kpi
        .ues
        .iter()
        .map(|u| (u.connected, u.mean_delay_ms / 1000.0))
        .collect();
    let cqis: Vec<u8> = kpi.ues.iter().map(|u| u.cqi).collect();
    let r_delay = reward_delay(&delays, cfg);
    let r_rbu = reward_rbu(&kpi.rbu_vector(), cfg);
    let r_cqi = reward_cqi(&cqis, cfg);
    let [w1, w2, w3] = cfg.weights;
    RewardBreakdown {
        r_delay,
        r_rbu,
        r_cqi,
        total: w1 * r_delay + w2 * r_rbu + w3 * r_cqi,
    }
}

/// Attachment ratios followed by per-cell utilization.
pub fn build_state(kpi: &KpiWindow) -> Vec<f64> {
    let mut s = kpi.attachment_vector();
    s.extend(kpi.rbu_vector());
    s
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub action: usize,
    /// Offsets the action decoded to, one per cell.
    pub cio_db: Vec<f64>,
    pub state: Vec<f64>,
    pub reward: RewardBreakdown,
    pub kpi: KpiWindow,
}

pub struct BalancerEnv {
    sim: Simulation,
    space: ActionSpace,
    reward: RewardConfig,
}

impl BalancerEnv {
    pub fn new(sim: Simulation, space: ActionSpace, reward: RewardConfig) -> Result<Self> {
        reward.validate()?;
        let n_cells = sim.topology().n_cells();
        if space.k() != n_cells {
            return Err(Error::ShapeMismatch {
                what: "action space cells",
                expected: n_cells,
                got: space.k(),
            });
        }
        Ok(Self { sim, space, reward })
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Simulation {
        &mut self.sim
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn state_len(&self) -> usize {
        2 * self.space.k()
    }

    /// Resets the simulator and returns the initial state (all UEs on their
    /// initial cells, zero utilization).
    pub fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        self.sim.reset(episode)?;
        let n = self.sim.ues().len() as f64;
        let mut s: Vec<f64> = self
            .sim
            .attached_counts()
            .iter()
            .map(|&c| c as f64 / n)
            .collect();
        s.extend(core::iter::repeat_n(0.0, self.space.k()));
        Ok(s)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let cio = self.space.decode(action)?;
        self.sim.set_cio(&cio)?;
        let kpi = self.sim.run_agent_step()?;
        Ok(StepOutcome {
            action,
            cio_db: cio,
            state: build_state(&kpi),
            reward: reward_breakdown(&kpi, &self.reward),
            kpi,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpisodeLog {
    pub episode: u64,
    pub cumulative_reward: f64,
    pub epsilon: f64,
    pub mean_r_delay: f64,
    pub mean_r_rbu: f64,
    pub mean_r_cqi: f64,
}

/// Runs one episode; `policy` picks the action for each state and `on_step`
/// sees every transition. Returns the episode summary.
fn run_episode(
    env: &mut BalancerEnv,
    episode: u64,
    steps: usize,
    mut policy: impl FnMut(&[f64]) -> Result<usize>,
    mut on_step: impl FnMut(Transition, &StepOutcome) -> Result<()>,
) -> Result<(EpisodeLog, Vec<StepOutcome>)> {
    let mut state = env.reset(episode)?;
    let mut log = EpisodeLog {
        episode,
        cumulative_reward: 0.0,
        epsilon: 0.0,
        mean_r_delay: 0.0,
        mean_r_rbu: 0.0,
        mean_r_cqi: 0.0,
    };
    let mut outcomes = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = policy(&state)?;
        let out = env.step(action)?;
        log.cumulative_reward += out.reward.total;
        log.mean_r_delay += out.reward.r_delay;
        log.mean_r_rbu += out.reward.r_rbu;
        log.mean_r_cqi += out.reward.r_cqi;
        let t = Transition {
            state: core::mem::take(&mut state),
            action,
            reward: out.reward.total,
            next_state: out.state.clone(),
        };
        on_step(t, &out)?;
        state = out.state.clone();
        outcomes.push(out);
    }
    if steps > 0 {
        let n = steps as f64;
        log.mean_r_delay /= n;
        log.mean_r_rbu /= n;
        log.mean_r_cqi /= n;
    }
    Ok((log, outcomes))
}

/// Outer training loop: every step acts, stores the transition, updates the
/// agent and decays epsilon. `observe` receives each finished episode along
/// with its per-step outcomes.
pub fn run_training(
    env: &mut BalancerEnv,
    agent: &mut CdqlAgent,
    episodes: u64,
    steps: usize,
    mut observe: impl FnMut(&EpisodeLog, &[StepOutcome]),
) -> Result<Vec<EpisodeLog>> {
    let mut logs = Vec::with_capacity(episodes as usize);
    for episode in 0..episodes {
        let agent_cell = core::cell::RefCell::new(&mut *agent);
        let (mut log, outcomes) = run_episode(
            env,
            episode,
            steps,
            |s| agent_cell.borrow_mut().act(s),
            |t, _| {
                let mut a = agent_cell.borrow_mut();
                a.remember(t);
                a.update()?;
                a.decay_epsilon();
                Ok(())
            },
        )?;
        log.epsilon = agent.epsilon();
        observe(&log, &outcomes);
        logs.push(log);
    }
    Ok(logs)
}

/// One episode with the greedy policy and no learning.
pub fn evaluate_greedy(
    env: &mut BalancerEnv,
    agent: &CdqlAgent,
    episode: u64,
    steps: usize,
) -> Result<(EpisodeLog, Vec<StepOutcome>)> {
    run_episode(env, episode, steps, |s| agent.greedy(s), |_, _| Ok(()))
}

/// One episode holding a fixed action (e.g. all-zero offsets for a baseline).
pub fn run_fixed(
    env: &mut BalancerEnv,
    action: usize,
    episode: u64,
    steps: usize,
) -> Result<(EpisodeLog, Vec<StepOutcome>)> {
    run_episode(env, episode, steps, |_| Ok(action), |_, _| Ok(()))
}

/// Runs the simulator alone with zero offsets, for baselines that need no
/// action space.
pub fn run_baseline(sim: &mut Simulation, episode: u64, steps: usize) -> Result<Vec<KpiWindow>> {
    sim.reset(episode)?;
    let zeros = vec![0.0; sim.topology().n_cells()];
    sim.set_cio(&zeros)?;
    (0..steps).map(|_| sim.run_agent_step()).collect()
}
