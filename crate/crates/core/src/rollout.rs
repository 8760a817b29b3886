//! Episode collection under a fixed per-batch step budget, and
//! deterministic evaluation.

use serde::{Deserialize, Serialize};

use crate::advantage::Trajectory;
use crate::env::{forward_distance_metric, Environment};
use crate::error::Result;
use crate::policy::GaussianPolicy;
use crate::rng::{episode_stream, Phase, Role};

/// Where a batch's random streams come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub role: Role,
    pub iteration: usize,
    pub phase: Phase,
}

/// Run one episode of at most `max_steps` steps. Episode `episode` of a
/// batch draws its reset and action noise from its own stream.
pub fn rollout(env: &Environment, policy: &GaussianPolicy, key: StreamKey, episode: usize, max_steps: usize, stochastic: bool) -> Result<Trajectory> {
    let mut rng = episode_stream(key.seed, key.role, key.iteration, key.phase, episode);
    let mut state = env.reset(&mut rng);
    let mut traj = Trajectory::default();
    traj.states.push(env.observe(&state));
    traj.infos.push(env.info(&state));
    while traj.len() < max_steps {
        let obs = traj.states.last().expect("states start non-empty");
        let action = if stochastic {
            policy.sample_action(obs, &mut rng)?
        } else {
            policy.mean(obs)?
        };
        let step = env.step(&state, &action)?;
        traj.actions.push(action);
        traj.env_rewards.push(step.reward);
        traj.rewards.push(step.reward);
        traj.aux_rewards.push(0.0);
        traj.dones.push(step.done);
        traj.states.push(env.observe(&step.next_state));
        traj.infos.push(step.info);
        state = step.next_state;
        if step.done {
            break;
        }
    }
    Ok(traj)
}

/// Collect episodes until exactly `step_budget` environment steps have been
/// taken. The last episode is truncated if the budget runs out mid-way.
pub fn collect_batch(env: &Environment, policy: &GaussianPolicy, step_budget: usize, key: StreamKey) -> Result<Vec<Trajectory>> {
    let mut batch = Vec::new();
    let mut used = 0;
    while used < step_budget {
        let traj = rollout(env, policy, key, batch.len(), step_budget - used, true)?;
        used += traj.len();
        batch.push(traj);
    }
    Ok(batch)
}

pub fn batch_steps(batch: &[Trajectory]) -> usize {
    batch.iter().map(Trajectory::len).sum()
}

/// Mean environment return over episodes that ended on their own
/// (terminated or hit the horizon); over all episodes if none did.
pub fn mean_env_return(batch: &[Trajectory]) -> f64 {
    let complete: Vec<f64> = batch.iter().filter(|t| t.terminated()).map(Trajectory::env_return).collect();
    let pool: Vec<f64> = if complete.is_empty() { batch.iter().map(Trajectory::env_return).collect() } else { complete };
    if pool.is_empty() {
        0.0
    } else {
        pool.iter().sum::<f64>() / pool.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    #[default]
    Return,
    ForwardDistance,
}

/// Mean metric over `episodes` noise-free rollouts. Reset noise comes from
/// fixed evaluation streams, so repeated calls see the same start states.
pub fn evaluate(policy: &GaussianPolicy, env: &Environment, episodes: usize, metric: EvalMetric, seed: u64) -> Result<f64> {
    let key = StreamKey {
        seed,
        role: Role::Evaluation,
        iteration: 0,
        phase: Phase::Eval,
    };
    let episodes = episodes.max(1);
    let mut total = 0.0;
    for e in 0..episodes {
        let traj = rollout(env, policy, key, e, env.horizon(), false)?;
        total += match metric {
            EvalMetric::Return => traj.env_return(),
            EvalMetric::ForwardDistance => forward_distance_metric(&traj),
        };
    }
    Ok(total / episodes as f64)
}
