//! The four learners: improved DDPG with the multi-domain action selection
//! module and augmented replay, vanilla DDPG, DQN and A2C, plus the replay
//! memory and exploration machinery they share.

pub mod a2c;
pub mod ddpg;
pub mod dqn;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::model::CyberspaceModel;
use crate::neural::NeuralError;
use crate::util::BitSet;

pub use a2c::train_a2c;
pub use ddpg::{train_ddpg, train_iddpg};
pub use dqn::train_dqn;

/// Stored stand-in for the unboundedly negative reward of an infeasible
/// action: large enough to dominate any achievable return while keeping the
/// loss finite.
pub const R_NEG: f64 = -1e6;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("neural: {0}")]
    Neural(#[from] NeuralError),
    #[error("action {index} is feasible; expected an infeasible one")]
    FeasibleAction { index: usize },
    #[error("all actions are masked infeasible")]
    AllMasked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Iddpg,
    Ddpg,
    Dqn,
    A2c,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Iddpg => "iddpg",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Dqn => "dqn",
            AgentKind::A2c => "a2c",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iddpg" => Some(AgentKind::Iddpg),
            "ddpg" => Some(AgentKind::Ddpg),
            "dqn" => Some(AgentKind::Dqn),
            "a2c" => Some(AgentKind::A2c),
            _ => None,
        }
    }
}

/// Hyperparameters shared by every learner. Defaults follow the usual DDPG
/// pairing; the episode protocol defaults to 500 episodes of 10000 steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    // Discount for future reward.
    pub gamma: f64,
    // Soft-update coefficient for the target networks.
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub episodes: u32,
    pub episode_limit: u32,
    pub actor_lr: f64,
    pub critic_lr: f64,
    // Gaussian score noise, decayed linearly over the step budget.
    pub noise_start: f64,
    pub noise_end: f64,
    // Epsilon-greedy schedule for DQN.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    // Gradient step every this many environment steps.
    pub train_every: u32,
    // Replay size required before updates begin.
    pub warmup: usize,
    // Hard target sync period for DQN, in steps.
    pub dqn_sync_every: u32,
    // Rollout segment length for A2C.
    pub a2c_n_step: usize,
    // Entropy bonus weight for A2C; zero disables it.
    pub entropy_coef: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.01,
            batch_size: 64,
            replay_capacity: 100_000,
            episodes: 500,
            episode_limit: 10_000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            noise_start: 0.3,
            noise_end: 0.01,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            train_every: 1,
            warmup: 1_000,
            dqn_sync_every: 1_000,
            a2c_n_step: 16,
            entropy_coef: 0.0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// A compact setting for constrained runs: 100 episodes of 2000 steps
    /// with sparser updates.
    pub fn scaled() -> Self {
        AgentConfig {
            episodes: 100,
            episode_limit: 2_000,
            batch_size: 32,
            train_every: 8,
            warmup: 500,
            ..AgentConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Independent deterministic RNG stream per component.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream))
    }

    pub(crate) fn total_steps(&self) -> u64 {
        self.episodes as u64 * self.episode_limit as u64
    }
}

/// Linear schedule from `start` to `end` over the unit interval.
pub fn linear_schedule(start: f64, end: f64, frac: f64) -> f64 {
    let f = frac.clamp(0.0, 1.0);
    start + (end - start) * f
}

/// Per-episode training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub reward: f64,
    pub successes: u32,
    /// Shortest successful attack within the episode, if any.
    pub min_steps: Option<u32>,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub episodes: Vec<EpisodeMetrics>,
    pub total_successes: u64,
    /// Shortest successful attack observed anywhere in the run.
    pub min_steps: Option<u32>,
    /// Mean length over all successful attacks.
    pub mean_success_steps: Option<f64>,
    /// Executed actions whose preconditions did not hold.
    pub infeasible_executions: u64,
}

impl TrainingResult {
    pub fn empty() -> Self {
        TrainingResult {
            episodes: Vec::new(),
            total_successes: 0,
            min_steps: None,
            mean_success_steps: None,
            infeasible_executions: 0,
        }
    }
}

/// Accumulates per-step outcomes into episode and run level metrics.
#[derive(Debug, Default)]
pub(crate) struct MetricsCollector {
    pub episodes: Vec<EpisodeMetrics>,
    current_reward: f64,
    current_successes: u32,
    current_min: Option<u32>,
    pub total_successes: u64,
    pub min_steps: Option<u32>,
    success_step_sum: u64,
    pub infeasible_executions: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_step(&mut self, reward: f64, feasible: bool, success_steps: Option<u32>) {
        self.current_reward += reward;
        if !feasible {
            self.infeasible_executions += 1;
        }
        if let Some(steps) = success_steps {
            self.current_successes += 1;
            self.total_successes += 1;
            self.success_step_sum += steps as u64;
            self.current_min = Some(self.current_min.map_or(steps, |m| m.min(steps)));
            self.min_steps = Some(self.min_steps.map_or(steps, |m| m.min(steps)));
        }
    }

    pub fn end_episode(&mut self) {
        self.episodes.push(EpisodeMetrics {
            reward: self.current_reward,
            successes: self.current_successes,
            min_steps: self.current_min,
        });
        self.current_reward = 0.0;
        self.current_successes = 0;
        self.current_min = None;
    }

    pub fn finish(self) -> TrainingResult {
        let mean = if self.total_successes > 0 {
            Some(self.success_step_sum as f64 / self.total_successes as f64)
        } else {
            None
        };
        TrainingResult {
            episodes: self.episodes,
            total_successes: self.total_successes,
            min_steps: self.min_steps,
            mean_success_steps: mean,
            infeasible_executions: self.infeasible_executions,
        }
    }
}

/// One replay record: the state pair as permission bit vectors, the executed
/// (or attempted) action index standing for its one-hot vector, the recurrent
/// hidden snapshots used when the states were visited, and the flags that
/// shape the bootstrap target.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: BitSet,
    pub hidden: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: BitSet,
    pub next_hidden: Vec<f64>,
    pub terminal: bool,
    /// Augmented record of an infeasible attempt; never bootstrapped.
    pub feasible_penalty: bool,
}

/// Fixed-capacity ring buffer with uniform distinct-index sampling.
#[derive(Debug)]
pub struct ReplayMemory<T> {
    buf: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayMemory { buf: Vec::with_capacity(capacity.min(1 << 20)), capacity, cursor: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.buf.len() < self.capacity {
            self.buf.push(item);
        } else {
            self.buf[self.cursor] = item;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.buf[i]
    }

    /// `m` distinct indices drawn uniformly. Requires `m <= len`.
    pub fn sample_indices(&self, m: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(m <= self.buf.len());
        let mut picked = Vec::with_capacity(m);
        while picked.len() < m {
            let i = rng.gen_range(0..self.buf.len());
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked
    }
}

/// The multi-domain action selection module. The actor's noised scores give
/// the theory action `a_t` by plain argmax; restricting the same scores to
/// the feasible set gives the executed action `a_t'`, which coincides with
/// `a_t` whenever that one is feasible.
pub fn select_action_iddpg(
    scores: &[f64],
    mask: &BitSet,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<(usize, usize), AgentError> {
    debug_assert_eq!(scores.len(), mask.len());
    let noised = noisy_scores(scores, noise_sigma, rng);
    let theory = argmax(&noised);
    let executed = masked_argmax(&noised, mask).ok_or(AgentError::AllMasked)?;
    Ok((theory, executed))
}

pub(crate) fn noisy_scores(scores: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return scores.to_vec();
    }
    scores
        .iter()
        .map(|s| s + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn masked_argmax(xs: &[f64], mask: &BitSet) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in mask.ones() {
        best = match best {
            Some(b) if xs[b] >= xs[i] => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Appends the augmented replay record for an infeasible theory action: the
/// state does not advance and the stored reward is the huge negative value.
pub fn record_infeasible(
    memory: &mut ReplayMemory<Transition>,
    state: &BitSet,
    hidden: &[f64],
    action: usize,
    mask: &BitSet,
) -> Result<(), AgentError> {
    if mask.get(action) {
        return Err(AgentError::FeasibleAction { index: action });
    }
    memory.push(Transition {
        state: state.clone(),
        hidden: hidden.to_vec(),
        action,
        reward: R_NEG,
        next_state: state.clone(),
        next_hidden: hidden.to_vec(),
        terminal: true,
        feasible_penalty: true,
    });
    Ok(())
}

/// Dispatch by agent kind.
pub fn train(
    kind: AgentKind,
    model: &CyberspaceModel,
    config: &AgentConfig,
) -> Result<TrainingResult, AgentError> {
    match kind {
        AgentKind::Iddpg => train_iddpg(model, config),
        AgentKind::Ddpg => train_ddpg(model, config),
        AgentKind::Dqn => train_dqn(model, config),
        AgentKind::A2c => train_a2c(model, config),
    }
}
