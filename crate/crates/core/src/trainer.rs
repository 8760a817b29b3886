//! Interleaved simulator/robot training with a shared discriminator, and
//! the baseline variants it is compared against.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::advantage::{compute_advantages, fit_baseline, BaselineConfig, BaselineKind, BaselineNet, Trajectory};
use crate::discriminator::{extract_sequences, AlignmentConfig, Discriminator, System};
use crate::env::{DynamicsConfig, Environment, Family, Perturbation, RewardMode};
use crate::error::{check_len, Error, Result};
use crate::nn::MlpSpec;
use crate::policy::GaussianPolicy;
use crate::rng::{episode_stream, Phase, Role};
use crate::rollout::{batch_steps, collect_batch, evaluate, mean_env_return, EvalMetric, StreamKey};
use crate::trpo::{trpo_update, PolicyBatch, TrpoConfig, TrpoStats};

/// Episode index reserved for the baseline-fit stream of an update.
const FIT_STREAM: usize = usize::MAX;
/// Iteration index reserved for one-off initialization streams.
const INIT_ITERATION: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    /// Robot trained alone on target rewards.
    Independent,
    /// Pretrained simulator policy run on the robot without updates.
    DirectTransfer,
    /// Pretrained simulator policy refined on target rewards.
    FineTuning,
    /// Alignment reward for the robot only.
    MatlU,
    /// Alignment rewards for both agents.
    Matl,
    /// Mutual alignment starting from the pretrained simulator policy.
    MatlF,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 6] = [
        MethodVariant::Independent,
        MethodVariant::DirectTransfer,
        MethodVariant::FineTuning,
        MethodVariant::MatlU,
        MethodVariant::Matl,
        MethodVariant::MatlF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodVariant::Independent => "independent",
            MethodVariant::DirectTransfer => "direct_transfer",
            MethodVariant::FineTuning => "fine_tuning",
            MethodVariant::MatlU => "matl_u",
            MethodVariant::Matl => "matl",
            MethodVariant::MatlF => "matl_f",
        }
    }

    /// A simulator agent and a discriminator take part in training.
    pub fn is_aligned(self) -> bool {
        matches!(self, MethodVariant::MatlU | MethodVariant::Matl | MethodVariant::MatlF)
    }

    pub fn simulator_gets_aux(self) -> bool {
        matches!(self, MethodVariant::Matl | MethodVariant::MatlF)
    }

    pub fn updates_robot(self) -> bool {
        self != MethodVariant::DirectTransfer
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(self, MethodVariant::DirectTransfer | MethodVariant::FineTuning | MethodVariant::MatlF)
    }
}

impl std::fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `env + lambda * aux`, elementwise.
pub fn combine_rewards(env_rewards: &[f64], aux_rewards: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if env_rewards.len() != aux_rewards.len() {
        return Err(Error::Config(format!(
            "reward length mismatch: {} environment vs {} auxiliary",
            env_rewards.len(),
            aux_rewards.len()
        )));
    }
    Ok(env_rewards.iter().zip(aux_rewards).map(|(e, a)| e + lambda * a).collect())
}

/// Network sizes and optimizer settings shared by both agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub policy_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub baseline: BaselineKind,
    pub baseline_hidden: Vec<usize>,
    pub baseline_fit: BaselineConfig,
    pub gamma: f64,
    pub lambda_gae: f64,
    pub trpo: TrpoConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            policy_hidden: vec![32, 32],
            init_log_std: 0.0,
            baseline: BaselineKind::Gae,
            baseline_hidden: vec![32, 32],
            baseline_fit: BaselineConfig::default(),
            gamma: 0.995,
            lambda_gae: 0.97,
            trpo: TrpoConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.init_log_std.is_finite() {
            return Err(Error::invalid("init_log_std", "must be finite"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            return Err(Error::invalid("lambda_gae", "must lie in [0, 1]"));
        }
        if self.policy_hidden.contains(&0) || self.baseline_hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        if self.baseline_fit.epochs == 0 || self.baseline_fit.minibatch == 0 {
            return Err(Error::invalid("baseline_fit", "epochs and minibatch must be positive"));
        }
        self.trpo.validate()
    }
}

/// When simulator pretraining stops: the moving average of batch returns
/// over `window` iterations improves by less than `min_improvement`
/// (relative) on the previous window, or `max_iterations` is reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub max_iterations: usize,
    pub window: usize,
    pub min_improvement: f64,
    /// Plateau checks start only after this many iterations.
    pub min_iterations: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            max_iterations: 200,
            window: 20,
            min_improvement: 0.01,
            min_iterations: 40,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.window == 0 {
            return Err(Error::invalid("pretrain", "max_iterations and window must be positive"));
        }
        Ok(())
    }

    /// Plateau test on the return history so far.
    pub fn plateaued(&self, returns: &[f64]) -> bool {
        let w = self.window;
        if returns.len() < self.min_iterations.max(2 * w) {
            return false;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let n = returns.len();
        let now = mean(&returns[n - w..]);
        let before = mean(&returns[n - 2 * w..n - w]);
        (now - before) / before.abs().max(1e-8) < self.min_improvement
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Outer iterations.
    pub iterations: usize,
    /// Simulator-only updates per outer iteration.
    pub inner_iterations: usize,
    /// Episode horizon; the family default when absent.
    pub horizon: Option<usize>,
    /// Each batch spends `episodes_per_batch * horizon` environment steps.
    pub episodes_per_batch: usize,
    /// Configured alongside, not inside, the training section.
    #[serde(skip)]
    pub alignment: AlignmentConfig,
    pub agent: AgentConfig,
    pub pretrain: PretrainConfig,
    pub eval_episodes: usize,
    pub eval_metric: EvalMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            inner_iterations: 10,
            horizon: None,
            episodes_per_batch: 20,
            alignment: AlignmentConfig::default(),
            agent: AgentConfig::default(),
            pretrain: PretrainConfig::default(),
            eval_episodes: 5,
            eval_metric: EvalMetric::Return,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "need at least one outer iteration"));
        }
        if self.horizon == Some(0) {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.episodes_per_batch == 0 {
            return Err(Error::invalid("episodes_per_batch", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::invalid("eval_episodes", "must be at least 1"));
        }
        self.alignment.validate()?;
        self.agent.validate()?;
        self.pretrain.validate()
    }

    pub fn step_budget(&self, horizon: usize) -> usize {
        self.episodes_per_batch * horizon
    }
}

/// Source and target systems of one experiment. The target starts from the
/// source, is scaled by `perturbation`, then gets `target` overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub family: Family,
    #[serde(default)]
    pub source: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub target: serde_json::Map<String, serde_json::Value>,
    #[serde(default = "Perturbation::sim_to_robot")]
    pub perturbation: Perturbation,
    #[serde(default = "RewardMode::dense")]
    pub source_reward: RewardMode,
    #[serde(default = "RewardMode::dense")]
    pub target_reward: RewardMode,
    /// Reward used to score the robot policy; the target reward when absent.
    #[serde(default)]
    pub eval_reward: Option<RewardMode>,
    /// Reward for pretraining on the source; the source reward when absent.
    #[serde(default)]
    pub pretrain_reward: Option<RewardMode>,
    #[serde(default)]
    pub goal: Option<[f64; 2]>,
}

impl EnvConfig {
    pub fn new(family: Family) -> Self {
        EnvConfig {
            family,
            source: Default::default(),
            target: Default::default(),
            perturbation: Perturbation::sim_to_robot(),
            source_reward: RewardMode::dense(),
            target_reward: RewardMode::dense(),
            eval_reward: None,
            pretrain_reward: None,
            goal: None,
        }
    }

    pub fn dynamics(&self) -> Result<(DynamicsConfig, DynamicsConfig)> {
        self.perturbation.validate()?;
        let source = self.family.default_dynamics().with_overrides(&self.source)?;
        let target = source.perturbed(&self.perturbation).with_overrides(&self.target)?;
        Ok((source, target))
    }

    pub fn build(&self, horizon: Option<usize>) -> Result<Systems> {
        let (source_dyn, target_dyn) = self.dynamics()?;
        let horizon = horizon.unwrap_or(self.family.default_horizon());
        let finish = |dynamics: DynamicsConfig, reward: RewardMode| -> Result<Environment> {
            let env = Environment::new(self.family, dynamics, reward)?.with_horizon(horizon)?;
            match self.goal {
                Some(g) => env.with_goal(g),
                None => Ok(env),
            }
        };
        Ok(Systems {
            pretrain: finish(source_dyn.clone(), self.pretrain_reward.unwrap_or(self.source_reward))?,
            source: finish(source_dyn, self.source_reward)?,
            target: finish(target_dyn.clone(), self.target_reward)?,
            eval: finish(target_dyn, self.eval_reward.unwrap_or(self.target_reward))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Systems {
    pub source: Environment,
    pub target: Environment,
    /// Target dynamics with the evaluation reward.
    pub eval: Environment,
    /// Source dynamics with the pretraining reward.
    pub pretrain: Environment,
}

/// One trust-region learner with its value baseline.
#[derive(Clone, Debug)]
pub struct Agent {
    role: Role,
    policy: GaussianPolicy,
    baseline: Option<BaselineNet>,
    config: AgentConfig,
}

impl Agent {
    /// Fresh policy from the role's init stream, or a copy of `init`.
    pub fn new(role: Role, env: &Environment, config: &AgentConfig, seed: u64, init: Option<&GaussianPolicy>) -> Result<Self> {
        let mut rng = episode_stream(seed, role, INIT_ITERATION, Phase::Init, 0);
        let policy = match init {
            Some(p) => {
                check_len("initial policy state_dim", env.state_dim(), p.state_dim())?;
                check_len("initial policy action_dim", env.action_dim(), p.action_dim())?;
                p.clone()
            }
            None => GaussianPolicy::new(
                MlpSpec::new(env.state_dim(), config.policy_hidden.clone(), env.action_dim()),
                config.init_log_std,
                &mut rng,
            )?,
        };
        let baseline = match config.baseline {
            BaselineKind::None => None,
            BaselineKind::Gae => Some(BaselineNet::new(env.state_dim(), config.baseline_hidden.clone(), config.baseline_fit, &mut rng)?),
        };
        Ok(Agent {
            role,
            policy,
            baseline,
            config: config.clone(),
        })
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Advantages from the current baseline, one trust-region step, then a
    /// baseline refit on the same batch.
    pub fn update(&mut self, batch: &[Trajectory], key: StreamKey) -> Result<TrpoStats> {
        let adv = compute_advantages(batch, self.baseline.as_ref(), self.config.gamma, self.config.lambda_gae)?;
        let policy_batch = PolicyBatch {
            states: batch.iter().flat_map(|t| t.states[..t.len()].iter().cloned()).collect(),
            actions: batch.iter().flat_map(|t| t.actions.iter().cloned()).collect(),
            advantages: adv.advantages,
        };
        let (policy, stats) = trpo_update(&self.policy, &policy_batch, &self.config.trpo)?;
        self.policy = policy;
        if let Some(b) = self.baseline.as_mut() {
            let mut rng = episode_stream(key.seed, key.role, key.iteration, key.phase, FIT_STREAM);
            fit_baseline(batch, &adv.returns, b, &mut rng)?;
        }
        Ok(stats)
    }
}

/// Train a simulator policy on the source system with environment rewards
/// until its batch return plateaus. Returns the policy and the per-iteration
/// mean returns.
pub fn pretrain_simulator(systems: &Systems, config: &TrainConfig, seed: u64) -> Result<(GaussianPolicy, Vec<f64>)> {
    config.validate()?;
    let env = &systems.pretrain;
    let mut agent = Agent::new(Role::Simulator, env, &config.agent, seed ^ PRETRAIN_SALT, None)?;
    let budget = config.step_budget(env.horizon());
    let mut returns = Vec::new();
    for iteration in 0..config.pretrain.max_iterations {
        let key = StreamKey {
            seed,
            role: Role::Simulator,
            iteration,
            phase: Phase::Pretrain,
        };
        let wrap = |e: Error| Error::AtIteration {
            iteration,
            source: Box::new(e),
        };
        let batch = collect_batch(env, agent.policy(), budget, key).map_err(wrap)?;
        returns.push(mean_env_return(&batch));
        agent.update(&batch, key).map_err(wrap)?;
        if config.pretrain.plateaued(&returns) {
            info!("pretraining plateaued after {} iterations at return {:.3}", iteration + 1, returns[iteration]);
            break;
        }
    }
    Ok((agent.policy, returns))
}

/// Keeps the pretraining init stream apart from the simulator agent's own.
const PRETRAIN_SALT: u64 = 0x5052_4554_5241_494e;

/// Which agent an update belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Robot,
    SimulatorOuter,
    SimulatorInner,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub iteration: usize,
    pub kind: UpdateKind,
    pub stats: TrpoStats,
}

/// One row of a run's learning curve. Columns that do not apply to a
/// variant are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub target_steps: usize,
    pub env_return_R: f64,
    pub env_return_S: Option<f64>,
    pub aux_mean_R: Option<f64>,
    pub aux_mean_S: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub kl_R: Option<f64>,
    pub kl_S: Option<f64>,
    pub eval_metric: f64,
}

pub const METRIC_COLUMNS: [&str; 10] = [
    "iteration",
    "target_steps",
    "env_return_R",
    "env_return_S",
    "aux_mean_R",
    "aux_mean_S",
    "disc_accuracy",
    "kl_R",
    "kl_S",
    "eval_metric",
];

pub struct Trainer {
    variant: MethodVariant,
    config: TrainConfig,
    systems: Systems,
    seed: u64,
    robot: Agent,
    simulator: Option<Agent>,
    discriminator: Option<Discriminator>,
    iteration: usize,
    target_steps: usize,
    simulator_steps: usize,
    history: Vec<IterationMetrics>,
    updates: Vec<UpdateRecord>,
}

impl Trainer {
    /// `pretrained` seeds the robot for transfer variants and both agents
    /// for `matl_f`; it is ignored otherwise.
    pub fn new(variant: MethodVariant, config: TrainConfig, systems: Systems, seed: u64, pretrained: Option<&GaussianPolicy>) -> Result<Self> {
        config.validate()?;
        if systems.source.horizon() != systems.target.horizon() {
            return Err(Error::Config("source and target horizons differ".into()));
        }
        let pretrained = if variant.needs_pretrained() {
            Some(pretrained.ok_or_else(|| Error::Config(format!("{variant} needs a pretrained simulator policy")))?)
        } else {
            None
        };
        let robot = Agent::new(Role::Robot, &systems.target, &config.agent, seed, pretrained)?;
        let (simulator, discriminator) = if variant.is_aligned() {
            let sim_init = if variant == MethodVariant::MatlF { pretrained } else { None };
            let sim = Agent::new(Role::Simulator, &systems.source, &config.agent, seed, sim_init)?;
            let mut rng = episode_stream(seed, Role::Discriminator, INIT_ITERATION, Phase::Init, 0);
            let disc = Discriminator::new(systems.target.state_dim(), &config.alignment, &mut rng)?;
            (Some(sim), Some(disc))
        } else {
            (None, None)
        };
        Ok(Trainer {
            variant,
            config,
            systems,
            seed,
            robot,
            simulator,
            discriminator,
            iteration: 0,
            target_steps: 0,
            simulator_steps: 0,
            history: Vec::new(),
            updates: Vec::new(),
        })
    }

    pub fn variant(&self) -> MethodVariant {
        self.variant
    }

    pub fn robot_policy(&self) -> &GaussianPolicy {
        self.robot.policy()
    }

    pub fn simulator_policy(&self) -> Option<&GaussianPolicy> {
        self.simulator.as_ref().map(Agent::policy)
    }

    pub fn history(&self) -> &[IterationMetrics] {
        &self.history
    }

    /// Every trust-region update so far, in execution order.
    pub fn updates(&self) -> &[UpdateRecord] {
        &self.updates
    }

    pub fn target_steps(&self) -> usize {
        self.target_steps
    }

    pub fn simulator_steps(&self) -> usize {
        self.simulator_steps
    }

    fn key(&self, role: Role, phase: Phase) -> StreamKey {
        StreamKey {
            seed: self.seed,
            role,
            iteration: self.iteration,
            phase,
        }
    }

    /// Run the remaining outer iterations. `on_iteration` sees each row as
    /// it is produced; on error the rows so far stay in [`Trainer::history`].
    pub fn run(&mut self, mut on_iteration: impl FnMut(&IterationMetrics)) -> Result<()> {
        while self.iteration < self.config.iterations {
            let row = self.outer_iteration()?;
            on_iteration(&row);
        }
        Ok(())
    }

    /// One outer iteration: rollouts on both systems, discriminator update,
    /// auxiliary rewards from the updated discriminator, one update per
    /// agent, then the simulator-only inner loop.
    pub fn outer_iteration(&mut self) -> Result<IterationMetrics> {
        let iteration = self.iteration;
        let row = self.outer_iteration_inner().map_err(|e| Error::AtIteration {
            iteration,
            source: Box::new(e),
        })?;
        self.history.push(row.clone());
        self.iteration += 1;
        Ok(row)
    }

    fn outer_iteration_inner(&mut self) -> Result<IterationMetrics> {
        let horizon = self.systems.target.horizon();
        let budget = self.config.step_budget(horizon);
        let lambda = self.config.alignment.lambda;

        let mut sim_batch = match &self.simulator {
            Some(sim) => Some(collect_batch(&self.systems.source, sim.policy(), budget, self.key(Role::Simulator, Phase::Outer))?),
            None => None,
        };
        let mut robot_batch = collect_batch(&self.systems.target, self.robot.policy(), budget, self.key(Role::Robot, Phase::Outer))?;
        let robot_used = batch_steps(&robot_batch);
        debug_assert_eq!(robot_used, budget);

        let mut disc_accuracy = None;
        let (mut aux_mean_r, mut aux_mean_s) = (None, None);
        if let (Some(disc), Some(sim_batch)) = (self.discriminator.as_mut(), sim_batch.as_mut()) {
            let seq = self.config.alignment.seq;
            let sim_seqs: Vec<Vec<f64>> = sim_batch.iter().flat_map(|t| extract_sequences(t, &seq)).collect();
            let robot_seqs: Vec<Vec<f64>> = robot_batch.iter().flat_map(|t| extract_sequences(t, &seq)).collect();
            let mut rng = episode_stream(self.seed, Role::Discriminator, self.iteration, Phase::Outer, 0);
            disc.update(&sim_seqs, &robot_seqs, &mut rng)?;
            disc_accuracy = Some(disc.accuracy(&sim_seqs, &robot_seqs)?);
            aux_mean_r = Some(assign_aux(disc, &mut robot_batch, &robot_seqs, System::Robot, lambda, true)?);
            aux_mean_s = Some(assign_aux(disc, sim_batch, &sim_seqs, System::Simulator, lambda, self.variant.simulator_gets_aux())?);
        }

        let mut kl_r = None;
        if self.variant.updates_robot() {
            let key = self.key(Role::Robot, Phase::Outer);
            let stats = self.robot.update(&robot_batch, key)?;
            kl_r = Some(stats.kl);
            self.updates.push(UpdateRecord {
                iteration: self.iteration,
                kind: UpdateKind::Robot,
                stats,
            });
        }

        let mut kl_s = None;
        let mut env_return_s = None;
        if let (Some(sim), Some(sim_batch)) = (self.simulator.as_mut(), sim_batch.as_ref()) {
            env_return_s = Some(mean_env_return(sim_batch));
            let key = StreamKey {
                seed: self.seed,
                role: Role::Simulator,
                iteration: self.iteration,
                phase: Phase::Outer,
            };
            let stats = sim.update(sim_batch, key)?;
            kl_s = Some(stats.kl);
            self.updates.push(UpdateRecord {
                iteration: self.iteration,
                kind: UpdateKind::SimulatorOuter,
                stats,
            });
            self.simulator_steps += batch_steps(sim_batch);
            for m in 0..self.config.inner_iterations {
                let key = StreamKey {
                    phase: Phase::Inner(m as u32),
                    ..key
                };
                let inner = collect_batch(&self.systems.source, sim.policy(), budget, key)?;
                let stats = sim.update(&inner, key)?;
                self.updates.push(UpdateRecord {
                    iteration: self.iteration,
                    kind: UpdateKind::SimulatorInner,
                    stats,
                });
                self.simulator_steps += batch_steps(&inner);
            }
        }

        self.target_steps += robot_used;
        let eval_metric = evaluate(self.robot.policy(), &self.systems.eval, self.config.eval_episodes, self.config.eval_metric, self.seed)?;
        let row = IterationMetrics {
            iteration: self.iteration,
            target_steps: self.target_steps,
            env_return_R: mean_env_return(&robot_batch),
            env_return_S: env_return_s,
            aux_mean_R: aux_mean_r,
            aux_mean_S: aux_mean_s,
            disc_accuracy,
            kl_R: kl_r,
            kl_S: kl_s,
            eval_metric,
        };
        debug!("{} iteration {}: {:?}", self.variant, self.iteration, row);
        Ok(row)
    }
}

/// Write `aux` into each trajectory of `batch` and, when `train_on_aux`,
/// fold `lambda * aux` into its training rewards. Returns the mean raw
/// auxiliary reward. `seqs` are the batch's sequences in trajectory order.
fn assign_aux(disc: &Discriminator, batch: &mut [Trajectory], seqs: &[Vec<f64>], system: System, lambda: f64, train_on_aux: bool) -> Result<f64> {
    let mut offset = 0;
    let mut total = 0.0;
    for traj in batch.iter_mut() {
        let n = traj.len();
        let aux: Vec<f64> = seqs[offset..offset + n].iter().map(|z| disc.aux_reward(z, system)).collect::<Result<_>>()?;
        offset += n;
        total += aux.iter().sum::<f64>();
        // Skipping the sum at lambda = 0 keeps rewards bit-identical to
        // training without alignment.
        if train_on_aux && lambda > 0.0 {
            traj.rewards = combine_rewards(&traj.env_rewards, &aux, lambda)?;
        }
        traj.aux_rewards = aux;
    }
    check_len("auxiliary sequences", seqs.len(), offset)?;
    Ok(total / offset.max(1) as f64)
}
