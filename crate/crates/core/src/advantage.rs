//! Trajectories, the value baseline and generalized advantage estimation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{AdamConfig, AdamState, Mlp, MlpSpec, ParamVector, Trace};

/// One episode, possibly cut short by the batch step budget.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// Observations `s_0..=s_T`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Rewards the policy is trained on: environment plus weighted auxiliary.
    pub rewards: Vec<f64>,
    /// `true` where the episode terminated. A trajectory whose last entry is
    /// `false` was truncated and gets a bootstrapped tail value.
    pub dones: Vec<bool>,
    pub aux_rewards: Vec<f64>,
    pub env_rewards: Vec<f64>,
    /// Per-state diagnostic from the environment, `T + 1` entries.
    pub infos: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        check_len("trajectory states", t + 1, self.states.len())?;
        check_len("trajectory rewards", t, self.rewards.len())?;
        check_len("trajectory dones", t, self.dones.len())?;
        check_len("trajectory aux rewards", t, self.aux_rewards.len())?;
        check_len("trajectory env rewards", t, self.env_rewards.len())?;
        check_len("trajectory infos", t + 1, self.infos.len())?;
        if let Some(i) = self.rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::Numeric(format!("non-finite reward at step {i}")));
        }
        Ok(())
    }

    pub fn env_return(&self) -> f64 {
        self.env_rewards.iter().sum()
    }

    pub fn terminated(&self) -> bool {
        self.dones.last().copied().unwrap_or(false)
    }
}

/// How advantages are formed from rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Plain discounted reward-to-go, no critic.
    None,
    /// Learned value baseline with generalized advantage estimation.
    #[default]
    Gae,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub adam: AdamConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 5,
            minibatch: 64,
            adam: AdamConfig::default(),
        }
    }
}

/// State-value network. Targets are standardized per fitted batch; the
/// shift and scale are kept so predictions come out in return units.
#[derive(Clone, Debug)]
pub struct BaselineNet {
    net: Mlp,
    params: ParamVector,
    adam: AdamState,
    config: BaselineConfig,
    target_mean: f64,
    target_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitStats {
    /// Full-batch mean squared error in standardized units, before the first
    /// epoch and after each one.
    pub epoch_losses: Vec<f64>,
}

impl FitStats {
    /// The fit ended no worse than it started. Epoch-to-epoch wobble from
    /// minibatch noise near convergence is not counted.
    pub fn non_increasing(&self) -> bool {
        match (self.epoch_losses.first(), self.epoch_losses.last()) {
            (Some(first), Some(last)) => last <= first,
            _ => true,
        }
    }
}

impl BaselineNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: Vec<usize>, config: BaselineConfig, rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(state_dim, hidden, 1);
        let net = Mlp::new(spec)?;
        let params = net.spec().init_params(rng, 1.0);
        Ok(BaselineNet {
            adam: AdamState::new(params.len(), config.adam),
            net,
            params,
            config,
            target_mean: 0.0,
            target_scale: 1.0,
        })
    }

    /// All-zero network: predicts exactly 0 until fitted.
    pub fn zeros(state_dim: usize, hidden: Vec<usize>, config: BaselineConfig) -> Result<Self> {
        let net = Mlp::new(MlpSpec::new(state_dim, hidden, 1))?;
        let params = ParamVector::zeros(net.spec().layout());
        Ok(BaselineNet {
            adam: AdamState::new(params.len(), config.adam),
            net,
            params,
            config,
            target_mean: 0.0,
            target_scale: 1.0,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn predict(&self, state: &[f64]) -> Result<f64> {
        let y = self.net.forward(self.params.values(), state)?;
        Ok(self.target_mean + self.target_scale * y[0])
    }

    fn batch_loss(&self, states: &[&[f64]], scaled: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (s, t) in states.iter().zip(scaled) {
            let err = self.net.forward(self.params.values(), s)?[0] - t;
            total += err * err;
        }
        Ok(total / scaled.len() as f64)
    }

    /// Squared-error regression onto `targets` with Adam over shuffled
    /// minibatches for a fixed number of epochs.
    pub fn fit<R: Rng + ?Sized>(&mut self, states: &[&[f64]], targets: &[f64], rng: &mut R) -> Result<FitStats> {
        check_len("baseline targets", states.len(), targets.len())?;
        if states.is_empty() {
            return Err(Error::Config("baseline fit on an empty batch".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        self.target_mean = mean;
        self.target_scale = var.sqrt().max(1e-8);
        let scaled: Vec<f64> = targets.iter().map(|t| (t - mean) / self.target_scale).collect();

        let mut order: Vec<usize> = (0..states.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut trace = Trace::default();
        let mut epoch_losses = Vec::with_capacity(self.config.epochs + 1);
        epoch_losses.push(self.batch_loss(states, &scaled)?);
        let mb = self.config.minibatch.max(1);
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(mb) {
                grad.fill(0.0);
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    self.net.forward_trace(self.params.values(), states[i], &mut trace)?;
                    let err = trace.output()[0] - scaled[i];
                    self.net.backward(self.params.values(), &trace, &[2.0 * err * scale], &mut grad)?;
                }
                self.adam.step(self.params.values_mut(), &grad)?;
            }
            let loss = self.batch_loss(states, &scaled)?;
            if !(loss <= 1e6) {
                return Err(Error::Numeric(format!("baseline regression diverged: loss {loss}")));
            }
            epoch_losses.push(loss);
        }
        Ok(FitStats { epoch_losses })
    }
}

/// Flattened per-step advantages and value targets for a batch, in
/// trajectory order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageBatch {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimates, standardized across the whole batch.
///
/// With `baseline = None` the estimate is the discounted reward-to-go. A
/// terminated trajectory contributes no value after its last step; a
/// truncated one is bootstrapped with the baseline's value of its final
/// state.
pub fn compute_advantages(trajs: &[Trajectory], baseline: Option<&BaselineNet>, gamma: f64, lambda_gae: f64) -> Result<AdvantageBatch> {
    if trajs.iter().all(Trajectory::is_empty) {
        return Err(Error::Config("advantage estimation on an empty batch".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    if !(0.0..=1.0).contains(&lambda_gae) {
        return Err(Error::invalid("lambda_gae", format!("must lie in [0, 1], got {lambda_gae}")));
    }
    let total: usize = trajs.iter().map(Trajectory::len).sum();
    let mut advantages = Vec::with_capacity(total);
    let mut returns = Vec::with_capacity(total);
    for traj in trajs {
        traj.validate()?;
        let t_len = traj.len();
        let values: Vec<f64> = match baseline {
            Some(b) => traj.states.iter().map(|s| b.predict(s)).collect::<Result<_>>()?,
            None => vec![0.0; t_len + 1],
        };
        let tail = if traj.terminated() { 0.0 } else { values[t_len] };
        let mut adv = vec![0.0; t_len];
        let mut ret = vec![0.0; t_len];
        let (mut gae, mut g) = (0.0, tail);
        for t in (0..t_len).rev() {
            let next_value = if t + 1 == t_len { tail } else { values[t + 1] };
            let delta = traj.rewards[t] + gamma * next_value - values[t];
            gae = delta + gamma * lambda_gae * gae;
            g = traj.rewards[t] + gamma * g;
            adv[t] = gae;
            ret[t] = g;
        }
        advantages.extend(adv);
        returns.extend(ret);
    }
    standardize(&mut advantages);
    Ok(AdvantageBatch { advantages, returns })
}

/// `(x - mean) / (std + 1e-8)` in place.
pub fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Regress the baseline onto the batch's discounted returns.
pub fn fit_baseline<R: Rng + ?Sized>(trajs: &[Trajectory], returns: &[f64], baseline: &mut BaselineNet, rng: &mut R) -> Result<FitStats> {
    let states: Vec<&[f64]> = trajs.iter().flat_map(|t| t.states[..t.len()].iter().map(Vec::as_slice)).collect();
    baseline.fit(&states, returns, rng)
}
