//! Adversarial classifier over subsampled state sequences, and the
//! auxiliary alignment rewards derived from it.
//!
//! Convention: the discriminator (or critic) scores simulator sequences
//! high and robot sequences low. The robot is rewarded for looking like
//! the simulator, the simulator for looking like the robot.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::Trajectory;
use crate::error::{check_len, Error, Result};
use crate::nn::{sigmoid, AdamConfig, AdamState, Mlp, MlpSpec, OutputActivation, ParamVector, Trace};

/// Which of the two systems a sequence or reward belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Simulator,
    Robot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    /// Indices past the end of the trajectory reuse its final state.
    #[default]
    RepeatLast,
}

/// `zeta_t = (s_t, s_{t+k}, ..., s_{t+n k})` with stride `k` and `n = count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub stride: usize,
    pub count: usize,
    #[serde(default)]
    pub tail_policy: TailPolicy,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig::single_state()
    }
}

impl SequenceConfig {
    pub fn single_state() -> Self {
        SequenceConfig {
            stride: 1,
            count: 0,
            tail_policy: TailPolicy::RepeatLast,
        }
    }

    /// `(s_t, s_{t+stride})`.
    pub fn pair(stride: usize) -> Self {
        SequenceConfig {
            stride,
            count: 1,
            tail_policy: TailPolicy::RepeatLast,
        }
    }

    pub fn len(&self) -> usize {
        self.count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("seq.stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// One concatenated sequence per step `t in [0, T)`, using only
/// `s_0..s_{T-1}`.
pub fn extract_sequences(traj: &Trajectory, seq: &SequenceConfig) -> Vec<Vec<f64>> {
    let t_len = traj.len();
    (0..t_len)
        .map(|t| {
            (0..=seq.count)
                .flat_map(|j| traj.states[(t + j * seq.stride).min(t_len - 1)].iter().copied())
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Sigmoid classifier; rewards are `+-log D`.
    Confusion,
    /// Weight-clipped critic; rewards are `+-f`.
    Wasserstein {
        #[serde(default = "default_clip")]
        clip: f64,
        /// Critic passes over the batch per policy update.
        #[serde(default = "default_critic_updates")]
        critic_updates: usize,
    },
}

fn default_clip() -> f64 {
    0.05
}

fn default_critic_updates() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    /// Weight of the auxiliary reward.
    pub lambda: f64,
    pub seq: SequenceConfig,
    pub loss: LossKind,
    pub disc_epochs: usize,
    pub disc_minibatch: usize,
    pub logit_clamp: f64,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            lambda: 0.1,
            seq: SequenceConfig::single_state(),
            loss: LossKind::Confusion,
            disc_epochs: 1,
            disc_minibatch: 64,
            logit_clamp: 10.0,
            hidden: vec![32],
            adam: AdamConfig::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        self.seq.validate()?;
        if self.disc_epochs == 0 {
            return Err(Error::invalid("disc_epochs", "must be at least 1"));
        }
        if self.disc_minibatch == 0 {
            return Err(Error::invalid("disc_minibatch", "must be at least 1"));
        }
        if !(self.logit_clamp.is_finite() && self.logit_clamp > 0.0) {
            return Err(Error::invalid("logit_clamp", "must be positive"));
        }
        if let LossKind::Wasserstein { clip, critic_updates } = self.loss {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(Error::invalid("loss.clip", "must be positive"));
            }
            if critic_updates == 0 {
                return Err(Error::invalid("loss.critic_updates", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Streaming per-dimension mean and variance (Welford).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    /// Identity until at least two samples have been seen.
    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        if self.count < 2.0 {
            out.extend_from_slice(x);
            return;
        }
        for ((&v, m), s) in x.iter().zip(&self.mean).zip(&self.m2) {
            let var = s / self.count;
            out.push((v - m) / (var + 1e-8).sqrt());
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    net: Mlp,
    params: ParamVector,
    adam: AdamState,
    loss: LossKind,
    seq: SequenceConfig,
    state_dim: usize,
    epochs: usize,
    minibatch: usize,
    logit_clamp: f64,
    norm: RunningNorm,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, config: &AlignmentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let act = match config.loss {
            LossKind::Confusion => OutputActivation::Sigmoid,
            LossKind::Wasserstein { .. } => OutputActivation::Identity,
        };
        let spec = MlpSpec::new(state_dim * config.seq.len(), config.hidden.clone(), 1).with_output(act);
        let net = Mlp::new(spec)?;
        let mut params = net.spec().init_params(rng, 1.0);
        let epochs = match config.loss {
            LossKind::Confusion => config.disc_epochs,
            LossKind::Wasserstein { clip, critic_updates } => {
                clip_values(params.values_mut(), clip);
                critic_updates
            }
        };
        Ok(Discriminator {
            adam: AdamState::new(params.len(), config.adam),
            net,
            params,
            loss: config.loss,
            seq: config.seq,
            state_dim,
            epochs,
            minibatch: config.disc_minibatch,
            logit_clamp: config.logit_clamp,
            norm: RunningNorm::new(state_dim),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.net.spec()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn sequence_config(&self) -> &SequenceConfig {
        &self.seq
    }

    /// Replace the network weights (layout must match).
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        self.params = self.params.with_values(values)?;
        Ok(())
    }

    fn normalized(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        check_len("discriminator sequence", self.net.input_dim(), zeta.len())?;
        let mut out = Vec::with_capacity(zeta.len());
        for block in zeta.chunks(self.state_dim) {
            self.norm.apply(block, &mut out);
        }
        Ok(out)
    }

    fn prob_bounds(&self) -> (f64, f64) {
        (sigmoid(-self.logit_clamp), sigmoid(self.logit_clamp))
    }

    /// Clamped probability `D(zeta)` that `zeta` came from the simulator.
    pub fn probability(&self, zeta: &[f64]) -> Result<f64> {
        self.require(LossKind::Confusion)?;
        let (lo, hi) = self.prob_bounds();
        Ok(self.net.forward(self.params.values(), &self.normalized(zeta)?)?[0].clamp(lo, hi))
    }

    /// Critic score `f(zeta)`.
    pub fn critic(&self, zeta: &[f64]) -> Result<f64> {
        self.require(LossKind::Wasserstein { clip: 0.0, critic_updates: 0 })?;
        Ok(self.net.forward(self.params.values(), &self.normalized(zeta)?)?[0])
    }

    fn require(&self, kind: LossKind) -> Result<()> {
        let same = std::mem::discriminant(&self.loss) == std::mem::discriminant(&kind);
        if same {
            Ok(())
        } else {
            Err(Error::Contract(format!("operation needs a {kind:?} discriminator, this one is {:?}", self.loss)))
        }
    }

    /// `-L_D` (confusion) or `-(E_sim f - E_robot f)` (Wasserstein) on the
    /// given sets, and its gradient in the network parameters.
    pub fn loss_and_grad(&self, sim: &[&[f64]], robot: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        if sim.is_empty() || robot.is_empty() {
            return Err(Error::Config("discriminator loss needs both simulator and robot sequences".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut trace = Trace::default();
        let (lo, hi) = self.prob_bounds();
        let mut loss = 0.0;
        for (set, sign) in [(sim, 1.0), (robot, -1.0)] {
            let w = 1.0 / set.len() as f64;
            for zeta in set {
                let x = self.normalized(zeta)?;
                self.net.forward_trace(self.params.values(), &x, &mut trace)?;
                let out = trace.output()[0];
                let cot = match self.loss {
                    LossKind::Confusion => {
                        let d = out.clamp(lo, hi);
                        let clamped = d != out;
                        if sign > 0.0 {
                            loss -= w * d.ln();
                            if clamped { 0.0 } else { -w / d }
                        } else {
                            loss -= w * (1.0 - d).ln();
                            if clamped { 0.0 } else { w / (1.0 - d) }
                        }
                    }
                    LossKind::Wasserstein { .. } => {
                        loss -= sign * w * out;
                        -sign * w
                    }
                };
                if cot != 0.0 {
                    self.net.backward(self.params.values(), &trace, &[cot], &mut grad)?;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Train on the latest batches. Input statistics are first updated with
    /// the states of both systems, then the network takes Adam steps over
    /// balanced minibatches. Returns the mean minibatch loss.
    pub fn update<'a, R: Rng + ?Sized>(&mut self, sim: &'a [Vec<f64>], robot: &'a [Vec<f64>], rng: &mut R) -> Result<f64> {
        if sim.is_empty() || robot.is_empty() {
            return Err(Error::Config("discriminator update needs both simulator and robot sequences".into()));
        }
        for zeta in sim.iter().chain(robot) {
            check_len("discriminator sequence", self.net.input_dim(), zeta.len())?;
            self.norm.update(&zeta[..self.state_dim]);
        }
        let mb = self.minibatch;
        let steps = sim.len().max(robot.len()).div_ceil(mb);
        let mut sim_order: Vec<usize> = (0..sim.len()).collect();
        let mut robot_order: Vec<usize> = (0..robot.len()).collect();
        let (mut total, mut count) = (0.0, 0);
        for _ in 0..self.epochs {
            sim_order.shuffle(rng);
            robot_order.shuffle(rng);
            for k in 0..steps {
                // The smaller set wraps around so every minibatch is balanced.
                let take = |order: &[usize], set: &'a [Vec<f64>]| -> Vec<&'a [f64]> {
                    (0..mb.min(order.len())).map(|j| set[order[(k * mb + j) % order.len()]].as_slice()).collect()
                };
                let s = take(&sim_order, sim);
                let r = take(&robot_order, robot);
                let (loss, grad) = self.loss_and_grad(&s, &r)?;
                self.adam.step(self.params.values_mut(), &grad)?;
                if let LossKind::Wasserstein { clip, .. } = self.loss {
                    clip_values(self.params.values_mut(), clip);
                }
                total += loss;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    /// Fraction of sequences attributed to the right system. The Wasserstein
    /// critic thresholds at the midpoint of the two classes' mean scores.
    pub fn accuracy(&self, sim: &[Vec<f64>], robot: &[Vec<f64>]) -> Result<f64> {
        if sim.is_empty() || robot.is_empty() {
            return Err(Error::Config("accuracy needs both simulator and robot sequences".into()));
        }
        let raw = |z: &[f64]| -> Result<f64> { Ok(self.net.forward(self.params.values(), &self.normalized(z)?)?[0]) };
        let s: Vec<f64> = sim.iter().map(|z| raw(z)).collect::<Result<_>>()?;
        let r: Vec<f64> = robot.iter().map(|z| raw(z)).collect::<Result<_>>()?;
        let threshold = match self.loss {
            LossKind::Confusion => 0.5,
            LossKind::Wasserstein { .. } => 0.5 * (mean(&s) + mean(&r)),
        };
        let correct = s.iter().filter(|&&v| v > threshold).count() + r.iter().filter(|&&v| v < threshold).count();
        Ok(correct as f64 / (s.len() + r.len()) as f64)
    }

    /// Auxiliary reward for `system` under whichever loss kind this is.
    pub fn aux_reward(&self, zeta: &[f64], system: System) -> Result<f64> {
        match self.loss {
            LossKind::Confusion => match system {
                System::Robot => alignment_reward_robot(self, zeta),
                System::Simulator => alignment_reward_sim(self, zeta),
            },
            LossKind::Wasserstein { .. } => wasserstein_rewards(self, zeta, system),
        }
    }
}

fn clip_values(values: &mut [f64], c: f64) {
    values.iter_mut().for_each(|v| *v = v.clamp(-c, c));
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `log D(zeta)`.
pub fn alignment_reward_robot(d: &Discriminator, zeta: &[f64]) -> Result<f64> {
    Ok(d.probability(zeta)?.ln())
}

/// `-log D(zeta)`.
pub fn alignment_reward_sim(d: &Discriminator, zeta: &[f64]) -> Result<f64> {
    Ok(-alignment_reward_robot(d, zeta)?)
}

/// `f(zeta)` for the robot, `-f(zeta)` for the simulator.
pub fn wasserstein_rewards(critic: &Discriminator, zeta: &[f64], system: System) -> Result<f64> {
    let f = critic.critic(zeta)?;
    Ok(match system {
        System::Robot => f,
        System::Simulator => -f,
    })
}

/// Train `d` on two sets of sequences (see [`Discriminator::update`]).
pub fn discriminator_update<R: Rng + ?Sized>(d: &mut Discriminator, sim_seqs: &[Vec<f64>], robot_seqs: &[Vec<f64>], rng: &mut R) -> Result<f64> {
    d.update(sim_seqs, robot_seqs, rng)
}
