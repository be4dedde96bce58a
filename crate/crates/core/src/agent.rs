//! Clipped double Q-learning over a discrete action set.
//!
//! Two online networks and their target copies. Each update samples a
//! uniform minibatch, builds one shared bootstrap target from the target
//! copies (each copy evaluates its own greedy action; the smaller value
//! wins), takes one Adam step per online network on the Huber loss of the
//! taken action's TD error, then Polyak-averages both targets.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{huber, huber_grad, Adam, Mlp, Trace};
use crate::rng::{stream, stream_rng, SimRng};

/// How the uniform draw is compared with epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EpsilonMode {
    /// Explore with probability epsilon.
    #[default]
    Standard,
    /// Exploit when `epsilon >= x`, explore otherwise.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub epsilon_mode: EpsilonMode,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub huber_delta: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon: 1.0,
            epsilon_min: 0.001,
            epsilon_decay: 0.995,
            epsilon_mode: EpsilonMode::Standard,
            tau: 0.005,
            lr: 1e-3,
            batch: 32,
            huber_delta: 1.0,
            hidden: vec![64, 64],
            buffer_capacity: 10_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool); 9] = [
            ("gamma", self.gamma > 0.0 && self.gamma < 1.0),
            ("epsilon", (0.0..=1.0).contains(&self.epsilon)),
            ("epsilon_min", (0.0..=1.0).contains(&self.epsilon_min)),
            (
                "epsilon_decay",
                self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0,
            ),
            ("tau", self.tau > 0.0 && self.tau <= 1.0),
            ("lr", self.lr > 0.0 && self.lr.is_finite()),
            ("batch", self.batch >= 1),
            (
                "huber_delta",
                self.huber_delta > 0.0 && self.huber_delta.is_finite(),
            ),
            (
                "buffer_capacity",
                self.buffer_capacity >= self.batch && !self.hidden.contains(&0),
            ),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((what, _)) => Err(Error::invalid(what, "outside its valid range")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity ring; once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            cursor: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Slot the next push writes.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` distinct entries drawn uniformly, or `None` if fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Option<Vec<&Transition>> {
        if self.items.len() < n {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), n)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Bootstrap target with its pieces exposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdqlTarget {
    /// `reward + gamma * bootstrap`.
    pub value: f64,
    /// `min(greedy_values)`.
    pub bootstrap: f64,
    /// Each network's value at its own greedy action on the next state.
    pub greedy_values: [f64; 2],
}

pub fn cdql_target(
    reward: f64,
    next_state: &[f64],
    nets: [&Mlp; 2],
    gamma: f64,
) -> Result<CdqlTarget> {
    let mut greedy_values = [0.0; 2];
    for (v, net) in greedy_values.iter_mut().zip(nets) {
        let q = net.forward(next_state)?;
        *v = q[argmax(&q)];
    }
    Ok(target_from_values(reward, greedy_values, gamma))
}

fn target_from_values(reward: f64, greedy_values: [f64; 2], gamma: f64) -> CdqlTarget {
    let bootstrap = greedy_values[0].min(greedy_values[1]);
    CdqlTarget {
        value: reward + gamma * bootstrap,
        bootstrap,
        greedy_values,
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.sizes() != online.sizes() {
        return Err(Error::ShapeMismatch {
            what: "polyak parameters",
            expected: online.params().len(),
            got: target.params().len(),
        });
    }
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

pub fn select_action<R: Rng + ?Sized>(
    net: &Mlp,
    state: &[f64],
    epsilon: f64,
    mode: EpsilonMode,
    rng: &mut R,
) -> Result<usize> {
    let x: f64 = rng.gen();
    let explore = match mode {
        EpsilonMode::Standard => x < epsilon,
        EpsilonMode::Literal => epsilon < x,
    };
    if explore {
        Ok(rng.gen_range(0..net.output_len()))
    } else {
        Ok(argmax(&net.forward(state)?))
    }
}

pub fn decay_epsilon(epsilon: f64, cfg: &AgentConfig) -> f64 {
    if epsilon > cfg.epsilon_min {
        (epsilon * cfg.epsilon_decay).max(cfg.epsilon_min)
    } else {
        cfg.epsilon_min
    }
}

/// Mean Huber loss of `net` on `batch` against per-sample `targets`, and
/// its gradient with respect to the network parameters.
pub fn batch_loss_and_grad(
    net: &Mlp,
    batch: &[&Transition],
    targets: &[f64],
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.params().len()];
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let n = batch.len() as f64;
    let mut grad_out = vec![0.0; net.output_len()];
    for (t, &y) in batch.iter().zip(targets) {
        net.forward_traced(&t.state, &mut trace)?;
        let q = trace.output()[t.action];
        let err = y - q;
        loss += huber(err, delta) / n;
        grad_out.fill(0.0);
        grad_out[t.action] = -huber_grad(err, delta) / n;
        net.backward(&trace, &grad_out, &mut grad)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct CdqlAgent {
    cfg: AgentConfig,
    online: [Mlp; 2],
    target: [Mlp; 2],
    optim: [Adam; 2],
    buffer: ReplayBuffer,
    epsilon: f64,
    policy_rng: SimRng,
    replay_rng: SimRng,
}

impl CdqlAgent {
    /// Fresh agent; both online networks are independently initialized from
    /// `seed` and the targets start as exact copies.
    pub fn new(cfg: AgentConfig, n_inputs: usize, n_actions: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(n_actions);
        let mut init = stream_rng(seed, stream::AGENT_INIT, 0);
        let a = Mlp::glorot(&sizes, &mut init)?;
        let b = Mlp::glorot(&sizes, &mut init)?;
        let n = a.params().len();
        Ok(Self {
            optim: [Adam::new(cfg.lr, n), Adam::new(cfg.lr, n)],
            target: [a.clone(), b.clone()],
            online: [a, b],
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            epsilon: cfg.epsilon,
            policy_rng: stream_rng(seed, stream::AGENT_POLICY, 0),
            replay_rng: stream_rng(seed, stream::AGENT_REPLAY, 0),
            cfg,
        })
    }

    /// Reassembles an agent from stored networks.
    pub fn from_parts(
        cfg: AgentConfig,
        online: [Mlp; 2],
        target: [Mlp; 2],
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let sizes = online[0].sizes();
        if online.iter().chain(&target).any(|m| m.sizes() != sizes) {
            return Err(Error::invalid(
                "networks",
                "all four networks must share one shape",
            ));
        }
        let n = online[0].params().len();
        Ok(Self {
            optim: [Adam::new(cfg.lr, n), Adam::new(cfg.lr, n)],
            online,
            target,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            epsilon,
            policy_rng: stream_rng(seed, stream::AGENT_POLICY, 0),
            replay_rng: stream_rng(seed, stream::AGENT_REPLAY, 0),
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn online(&self) -> &[Mlp; 2] {
        &self.online
    }

    pub fn targets(&self) -> &[Mlp; 2] {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn n_actions(&self) -> usize {
        self.online[0].output_len()
    }

    /// Epsilon-greedy action from the first online network.
    pub fn act(&mut self, state: &[f64]) -> Result<usize> {
        select_action(
            &self.online[0],
            state,
            self.epsilon,
            self.cfg.epsilon_mode,
            &mut self.policy_rng,
        )
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.online[0].forward(state)?))
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon = decay_epsilon(self.epsilon, &self.cfg);
    }

    /// One training update; `None` until the buffer holds a full batch.
    pub fn update(&mut self) -> Result<Option<[f64; 2]>> {
        let batch: Vec<Transition> = match self.buffer.sample(&mut self.replay_rng, self.cfg.batch)
        {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&Transition> = batch.iter().collect();
        self.update_on(&refs).map(Some)
    }

    /// Update on an explicit batch.
    pub fn update_on(&mut self, batch: &[&Transition]) -> Result<[f64; 2]> {
        let targets = batch
            .iter()
            .map(|t| {
                cdql_target(
                    t.reward,
                    &t.next_state,
                    [&self.target[0], &self.target[1]],
                    self.cfg.gamma,
                )
                .map(|y| y.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut losses = [0.0; 2];
        for ((net, optim), loss) in self.online.iter_mut().zip(&mut self.optim).zip(&mut losses) {
            let (l, grad) = batch_loss_and_grad(net, batch, &targets, self.cfg.huber_delta)?;
            optim.step(net.params_mut(), &grad)?;
            *loss = l;
        }
        for (target, online) in self.target.iter_mut().zip(&self.online) {
            polyak(target, online, self.cfg.tau)?;
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net_with_output_bias(bias: &[f64]) -> Mlp {
        let mut net = Mlp::zeros(&[2, bias.len()]).unwrap();
        net.layer_mut(0).1.copy_from_slice(bias);
        net
    }

    #[test]
    fn target_hand_example() {
        let q1 = net_with_output_bias(&[1.0, 0.2]);
        let q2 = net_with_output_bias(&[0.7, 0.9]);
        let y = cdql_target(0.5, &[0.0, 0.0], [&q1, &q2], 0.95).unwrap();
        assert!((y.value - 1.355).abs() < 1e-12);
        assert_eq!(y.greedy_values, [1.0, 0.9]);
    }

    #[test]
    fn target_with_identical_nets_is_max() {
        let q = net_with_output_bias(&[0.3, 2.0, -1.0]);
        let y = cdql_target(1.0, &[0.0, 0.0], [&q, &q], 0.9).unwrap();
        assert_eq!(y.value, 1.0 + 0.9 * 2.0);
        let y0 = cdql_target(1.0, &[0.0, 0.0], [&q, &q], 0.0).unwrap();
        assert_eq!(y0.value, 1.0);
    }

    #[test]
    fn polyak_examples() {
        let online = net_with_output_bias(&[1.0, 1.0]);
        let mut t = net_with_output_bias(&[0.0, 0.0]);
        polyak(&mut t, &online, 0.5).unwrap();
        assert_eq!(t.layer(0).1, &[0.5, 0.5]);
        polyak(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.layer(0).1, &[0.5, 0.5]);
        polyak(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        let mut other = Mlp::zeros(&[3, 2]).unwrap();
        assert!(polyak(&mut other, &online, 0.5).is_err());
    }

    #[test]
    fn greedy_tie_breaks_low() {
        let net = net_with_output_bias(&[0.1, 0.9, 0.9]);
        let mut rng = stream_rng(1, stream::AGENT_POLICY, 0);
        for _ in 0..50 {
            assert_eq!(
                select_action(&net, &[0.0, 0.0], 0.0, EpsilonMode::Standard, &mut rng).unwrap(),
                1
            );
        }
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn literal_mode_inverts_comparison() {
        let net = net_with_output_bias(&[0.0, 5.0, 0.0, 0.0]);
        let mut rng = stream_rng(1, stream::AGENT_POLICY, 0);
        // epsilon = 1 always exploits in literal mode.
        for _ in 0..50 {
            assert_eq!(
                select_action(&net, &[0.0, 0.0], 1.0, EpsilonMode::Literal, &mut rng).unwrap(),
                1
            );
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let k = 10;
        let net = net_with_output_bias(&vec![0.0; k]);
        let mut rng = stream_rng(77, stream::AGENT_POLICY, 0);
        let n = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[select_action(&net, &[0.0, 0.0], 1.0, EpsilonMode::Standard, &mut rng)
                .unwrap()] += 1;
        }
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // Chi-square critical value for 9 degrees of freedom at p = 0.01.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig::default();
        assert_eq!(decay_epsilon(1.0, &cfg), 0.995);
        let mut e = 1.0;
        for _ in 0..100 {
            e = decay_epsilon(e, &cfg);
        }
        assert!((e - 0.6058).abs() < 1e-4);
        assert_eq!(decay_epsilon(0.001, &cfg), 0.001);
        let mut e = 1.0;
        for _ in 0..7500 {
            e = decay_epsilon(e, &cfg);
        }
        assert_eq!(e, 0.001);
    }

    #[test]
    fn buffer_keeps_latest() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..12 {
            b.push(Transition {
                state: vec![i as f64],
                action: i,
                reward: 0.0,
                next_state: vec![],
            });
        }
        assert_eq!(b.len(), 5);
        let mut kept: Vec<usize> = b.iter().map(|t| t.action).collect();
        kept.sort();
        assert_eq!(kept, vec![7, 8, 9, 10, 11]);
        assert_eq!(b.cursor(), 2);
        let mut rng = stream_rng(0, stream::AGENT_REPLAY, 0);
        assert!(b.sample(&mut rng, 6).is_none());
        let s = b.sample(&mut rng, 5).unwrap();
        let mut got: Vec<usize> = s.iter().map(|t| t.action).collect();
        got.sort();
        assert_eq!(got, kept);
    }

    #[test]
    fn zero_td_error_leaves_parameters() {
        let cfg = AgentConfig {
            hidden: vec![4],
            batch: 4,
            buffer_capacity: 8,
            ..AgentConfig::default()
        };
        let mut agent = CdqlAgent::new(cfg, 2, 3, 5).unwrap();
        // Zero networks predict 0 everywhere and bootstrap 0, so reward 0
        // gives a zero TD error.
        let zero = Mlp::zeros(&[2, 4, 3]).unwrap();
        let mut agent_zero = CdqlAgent::from_parts(
            agent.config().clone(),
            [zero.clone(), zero.clone()],
            [zero.clone(), zero.clone()],
            1.0,
            5,
        )
        .unwrap();
        let t = Transition {
            state: vec![0.3, -0.2],
            action: 1,
            reward: 0.0,
            next_state: vec![0.1, 0.4],
        };
        let batch = vec![&t; 4];
        let losses = agent_zero.update_on(&batch).unwrap();
        assert_eq!(losses, [0.0, 0.0]);
        assert_eq!(agent_zero.online()[0], zero);
        assert_eq!(agent_zero.targets()[1], zero);
        assert!(agent.update().unwrap().is_none());
    }

    #[test]
    fn loss_falls_on_fixed_batch() {
        let cfg = AgentConfig {
            hidden: vec![16, 16],
            batch: 8,
            buffer_capacity: 8,
            lr: 1e-2,
            ..AgentConfig::default()
        };
        let mut agent = CdqlAgent::new(cfg, 3, 4, 9).unwrap();
        let mut rng = stream_rng(9, stream::AGENT_REPLAY, 1);
        let batch: Vec<Transition> = (0..8)
            .map(|_| Transition {
                state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: rng.gen_range(0..4),
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let first = agent.update_on(&refs).unwrap();
        let mut last = first;
        for _ in 0..99 {
            last = agent.update_on(&refs).unwrap();
        }
        assert!(
            last[0] < first[0] && last[1] < first[1],
            "{first:?} -> {last:?}"
        );
    }
}
