//! DQN baseline: a dense Q-network over the permission vector with an
//! evaluate/target pair, epsilon-greedy selection over the feasible set, and
//! periodic hard target synchronization.

use rayon::prelude::*;

use crate::agents::{
    linear_schedule, masked_argmax, AgentConfig, AgentError, MetricsCollector, ReplayMemory,
    TrainingResult,
};
use crate::env::AttackEnv;
use crate::model::CyberspaceModel;
use crate::neural::{Act, Adam, Mlp, MlpGrads, DENSE_UNITS};
use crate::util::BitSet;

const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone)]
struct DqnTransition {
    state: BitSet,
    action: usize,
    reward: f64,
    next_state: BitSet,
    next_mask: BitSet,
    terminal: bool,
}

pub fn train_dqn(
    model: &CyberspaceModel,
    config: &AgentConfig,
) -> Result<TrainingResult, AgentError> {
    let mut env = AttackEnv::new(model);
    env.set_episode_limit(config.episode_limit);
    let state_dim = env.atom_count();
    let action_dim = env.action_count();

    let mut init_rng = config.rng(10);
    let mut q_net = Mlp::new(&[state_dim, DENSE_UNITS, DENSE_UNITS, action_dim], Act::Linear, &mut init_rng);
    let mut q_target = q_net.clone();
    let mut opt = Adam::new(config.critic_lr, &q_net);
    let mut explore_rng = config.rng(11);
    let mut replay_rng = config.rng(12);
    let mut memory: ReplayMemory<DqnTransition> = ReplayMemory::new(config.replay_capacity);
    let mut metrics = MetricsCollector::new();

    let total_steps = config.total_steps().max(1);
    let mut global_step: u64 = 0;

    for _episode in 0..config.episodes {
        let mut state = env.reset();
        loop {
            let mask = env.action_mask(&state);
            let epsilon = linear_schedule(
                config.epsilon_start,
                config.epsilon_end,
                global_step as f64 / total_steps as f64,
            );
            let action = select_epsilon_greedy(&q_net, &state.permissions, &mask, epsilon, &mut explore_rng)?;
            let out = env.step(&state, action)?;
            let next_mask = env.action_mask(&out.next);
            memory.push(DqnTransition {
                state: state.permissions.clone(),
                action,
                reward: out.reward,
                next_state: out.next.permissions.clone(),
                next_mask,
                terminal: out.attack_succeeded || out.episode_done,
            });
            metrics.on_step(out.reward, out.feasible, out.success_steps);
            global_step += 1;

            if memory.len() >= config.warmup.max(config.batch_size)
                && global_step % config.train_every as u64 == 0
            {
                update(&mut q_net, &q_target, &mut opt, &memory, config, &mut replay_rng)?;
            }
            if global_step % config.dqn_sync_every as u64 == 0 {
                q_target = q_net.clone();
            }

            state = out.next;
            if out.episode_done {
                break;
            }
        }
        metrics.end_episode();
    }
    Ok(metrics.finish())
}

/// Epsilon-greedy restricted to feasible actions: explore uniformly over the
/// feasible set, otherwise take the feasible argmax of the Q-values.
pub(crate) fn select_epsilon_greedy(
    q_net: &Mlp,
    state: &BitSet,
    mask: &BitSet,
    epsilon: f64,
    rng: &mut impl rand::Rng,
) -> Result<usize, AgentError> {
    let feasible: Vec<usize> = mask.ones().collect();
    if feasible.is_empty() {
        return Err(AgentError::AllMasked);
    }
    if rng.gen_range(0.0..1.0) < epsilon {
        return Ok(feasible[rng.gen_range(0..feasible.len())]);
    }
    let q = q_net.forward(&state.as_f64_vec())?;
    Ok(masked_argmax(&q, mask).expect("feasible set checked above"))
}

fn update(
    q_net: &mut Mlp,
    q_target: &Mlp,
    opt: &mut Adam,
    memory: &ReplayMemory<DqnTransition>,
    config: &AgentConfig,
    rng: &mut impl rand::Rng,
) -> Result<(), AgentError> {
    let m = config.batch_size;
    let indices = memory.sample_indices(m, rng);
    let chunk = m.div_ceil(GRAD_CHUNKS);

    let results: Vec<(MlpGrads, Result<(), AgentError>)> = indices
        .par_chunks(chunk)
        .map(|part| {
            let mut grads = q_net.grad_zeros();
            for &j in part {
                let tr = memory.get(j);
                let y = if tr.terminal {
                    tr.reward
                } else {
                    let next_q = match q_target.forward(&tr.next_state.as_f64_vec()) {
                        Ok(v) => v,
                        Err(e) => return (grads, Err(AgentError::Neural(e))),
                    };
                    let best = masked_argmax(&next_q, &tr.next_mask)
                        .map(|a| next_q[a])
                        .unwrap_or(0.0);
                    tr.reward + config.gamma * best
                };
                let (q, tape) = match q_net.forward_tape(&tr.state.as_f64_vec()) {
                    Ok(v) => v,
                    Err(e) => return (grads, Err(AgentError::Neural(e))),
                };
                let mut dq = vec![0.0; q.len()];
                dq[tr.action] = 2.0 * (q[tr.action] - y) / m as f64;
                q_net.backward(&tape, &dq, &mut grads);
            }
            (grads, Ok(()))
        })
        .collect();
    let mut total = q_net.grad_zeros();
    for (part, status) in results {
        status?;
        super::ddpg::accumulate_grads(&mut total, &part);
    }
    opt.step(q_net, &total);
    Ok(())
}
