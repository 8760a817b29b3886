//! Paired analytic-physics MDPs.
//!
//! A source and a target [`Environment`] of the same [`Family`] share state
//! and action spaces; only their [`DynamicsConfig`] (and possibly reward
//! mode) differ. Environments are plain values: [`Environment::step`] is a
//! pure function of `(state, action)`.
//!
//! Equations of motion for each family are derived in `docs/dynamics.md`.

mod cartpole;
mod hopper;
mod pointmass;
mod reacher;
mod reward;

pub use cartpole::CartpoleParams;
pub use hopper::{ContactModel, HopperParams};
pub use pointmass::PointMassParams;
pub use reacher::ReacherParams;
pub use reward::{forward_distance_metric, sparse_reward, uninformative_reward, RewardKind, RewardMode};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "pointmass")]
    PointMass,
    CartpoleBalance,
    CartpoleSwingup,
    Reacher2,
    HopperLite,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PointMass => "pointmass",
            Family::CartpoleBalance => "cartpole_balance",
            Family::CartpoleSwingup => "cartpole_swingup",
            Family::Reacher2 => "reacher2",
            Family::HopperLite => "hopper_lite",
        }
    }

    pub fn is_locomotion(self) -> bool {
        self == Family::HopperLite
    }

    pub fn default_horizon(self) -> usize {
        match self {
            Family::PointMass | Family::Reacher2 => 100,
            Family::CartpoleBalance | Family::CartpoleSwingup => 200,
            Family::HopperLite => 400,
        }
    }

    /// Effector goal used by dense distance rewards and sparse rewards.
    pub fn default_goal(self) -> [f64; 2] {
        match self {
            Family::PointMass => [1.0, 1.0],
            Family::CartpoleBalance | Family::CartpoleSwingup => [0.0, 2.0 * CartpoleParams::default().pole_half_length],
            Family::Reacher2 => [0.3, 0.6],
            Family::HopperLite => [10.0, 1.0],
        }
    }

    pub fn default_dynamics(self) -> DynamicsConfig {
        match self {
            Family::PointMass => DynamicsConfig::PointMass(PointMassParams::default()),
            Family::CartpoleBalance | Family::CartpoleSwingup => DynamicsConfig::Cartpole(CartpoleParams::default()),
            Family::Reacher2 => DynamicsConfig::Reacher(ReacherParams::default()),
            Family::HopperLite => DynamicsConfig::Hopper(HopperParams::default()),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Multiplicative dynamics perturbation turning a source config into a
/// target config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Perturbation {
    /// Scales every mass and inertia.
    pub density: f64,
    /// Scales every linear/joint damping coefficient.
    pub damping: f64,
    /// Scales ground/cart friction coefficients.
    pub friction: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            density: 1.0,
            damping: 1.0,
            friction: 1.0,
        }
    }
}

impl Perturbation {
    /// The "simulator vs robot" preset: heavier, twice as damped, half the friction.
    pub fn sim_to_robot() -> Self {
        Perturbation {
            density: 1.5,
            damping: 2.0,
            friction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("density", self.density), ("damping", self.damping), ("friction", self.friction)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("perturbation.{name}"), "must be a positive factor"));
            }
        }
        Ok(())
    }
}

/// Physical parameters of one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsConfig {
    PointMass(PointMassParams),
    Cartpole(CartpoleParams),
    Reacher(ReacherParams),
    Hopper(HopperParams),
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DynamicsConfig::PointMass(p) => p.validate(),
            DynamicsConfig::Cartpole(p) => p.validate(),
            DynamicsConfig::Reacher(p) => p.validate(),
            DynamicsConfig::Hopper(p) => p.validate(),
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            DynamicsConfig::PointMass(p) => p.dt,
            DynamicsConfig::Cartpole(p) => p.dt,
            DynamicsConfig::Reacher(p) => p.dt,
            DynamicsConfig::Hopper(p) => p.dt,
        }
    }

    pub fn perturbed(&self, p: &Perturbation) -> DynamicsConfig {
        match self {
            DynamicsConfig::PointMass(x) => DynamicsConfig::PointMass(x.perturbed(p)),
            DynamicsConfig::Cartpole(x) => DynamicsConfig::Cartpole(x.perturbed(p)),
            DynamicsConfig::Reacher(x) => DynamicsConfig::Reacher(x.perturbed(p)),
            DynamicsConfig::Hopper(x) => DynamicsConfig::Hopper(x.perturbed(p)),
        }
    }

    /// Override individual constants by key, e.g. `{"mass": 2.0}`.
    /// Unknown keys are rejected with the key name in the error.
    pub fn with_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<DynamicsConfig> {
        fn merge<T>(base: &T, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<T>
        where
            T: Serialize + serde::de::DeserializeOwned,
        {
            let mut value = serde_json::to_value(base)?;
            if let serde_json::Value::Object(map) = &mut value {
                for (k, v) in overrides {
                    map.insert(k.clone(), v.clone());
                }
            }
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
        }
        let merged = match self {
            DynamicsConfig::PointMass(x) => DynamicsConfig::PointMass(merge(x, overrides)?),
            DynamicsConfig::Cartpole(x) => DynamicsConfig::Cartpole(merge(x, overrides)?),
            DynamicsConfig::Reacher(x) => DynamicsConfig::Reacher(merge(x, overrides)?),
            DynamicsConfig::Hopper(x) => DynamicsConfig::Hopper(merge(x, overrides)?),
        };
        merged.validate()?;
        Ok(merged)
    }

    fn matches(&self, family: Family) -> bool {
        matches!(
            (self, family),
            (DynamicsConfig::PointMass(_), Family::PointMass)
                | (DynamicsConfig::Cartpole(_), Family::CartpoleBalance | Family::CartpoleSwingup)
                | (DynamicsConfig::Reacher(_), Family::Reacher2)
                | (DynamicsConfig::Hopper(_), Family::HopperLite)
        )
    }
}

/// Generalized positions and velocities plus the step index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// The termination predicate (not the horizon) fired.
    pub fell: bool,
    /// Forward position (m) for locomotion, distance to the goal (m) otherwise.
    pub info: f64,
}

/// One MDP: a family, its dynamics, a reward mode and an episode horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    family: Family,
    dynamics: DynamicsConfig,
    reward: RewardMode,
    horizon: usize,
    goal: [f64; 2],
}

/// Build an environment after validating its configuration.
pub fn make_env(family: Family, dynamics: DynamicsConfig, reward: RewardMode) -> Result<Environment> {
    Environment::new(family, dynamics, reward)
}

impl Environment {
    pub fn new(family: Family, dynamics: DynamicsConfig, reward: RewardMode) -> Result<Self> {
        if !dynamics.matches(family) {
            return Err(Error::invalid("dynamics", format!("parameters do not belong to family {family}")));
        }
        dynamics.validate()?;
        reward.validate()?;
        if matches!(reward.kind, RewardKind::Uninformative) && !family.is_locomotion() && family != Family::CartpoleBalance {
            return Err(Error::invalid("reward.kind", format!("uninformative rewards need a family that can fall, not {family}")));
        }
        Ok(Environment {
            family,
            dynamics,
            reward,
            horizon: family.default_horizon(),
            goal: family.default_goal(),
        })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_goal(mut self, goal: [f64; 2]) -> Result<Self> {
        if !goal.iter().all(|g| g.is_finite()) {
            return Err(Error::invalid("goal", "must be finite"));
        }
        self.goal = goal;
        Ok(self)
    }

    pub fn with_reward(mut self, reward: RewardMode) -> Result<Self> {
        reward.validate()?;
        self.reward = reward;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    pub fn reward_mode(&self) -> &RewardMode {
        &self.reward
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt()
    }

    /// Observation dimension seen by policies and the discriminator.
    pub fn state_dim(&self) -> usize {
        match self.family {
            Family::PointMass | Family::CartpoleBalance | Family::CartpoleSwingup => 4,
            Family::Reacher2 => 6,
            Family::HopperLite => 7,
        }
    }

    /// Actions are clamped to `[-1, 1]` per dimension and scaled by the
    /// family's actuator limit (force, torque or thrust).
    pub fn action_dim(&self) -> usize {
        match self.family {
            Family::PointMass | Family::Reacher2 | Family::HopperLite => 2,
            Family::CartpoleBalance | Family::CartpoleSwingup => 1,
        }
    }

    /// Sample an initial state with uniform noise on `q` and `qdot`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let mut noise = |scale: f64| rng.random_range(-scale..=scale);
        let (q, qdot) = match &self.dynamics {
            DynamicsConfig::PointMass(_) => (
                vec![noise(0.05), noise(0.05)],
                vec![noise(0.05), noise(0.05)],
            ),
            DynamicsConfig::Cartpole(_) => {
                let theta0 = if self.family == Family::CartpoleSwingup { std::f64::consts::PI } else { 0.0 };
                (vec![noise(0.05), theta0 + noise(0.05)], vec![noise(0.05), noise(0.05)])
            }
            DynamicsConfig::Reacher(_) => (vec![noise(0.1), noise(0.1)], vec![noise(0.05), noise(0.05)]),
            DynamicsConfig::Hopper(p) => {
                let (mut q, mut qdot) = p.rest_state();
                for v in q.iter_mut().skip(2) {
                    *v += noise(0.01);
                }
                for v in qdot.iter_mut() {
                    *v += noise(0.01);
                }
                q[1] += noise(0.005);
                (q, qdot)
            }
        };
        EnvState { q, qdot, t: 0 }
    }

    pub fn observe(&self, s: &EnvState) -> Vec<f64> {
        match &self.dynamics {
            DynamicsConfig::PointMass(_) => vec![s.q[0], s.q[1], s.qdot[0], s.qdot[1]],
            DynamicsConfig::Cartpole(_) => vec![s.q[0], s.qdot[0], wrap_angle(s.q[1]), s.qdot[1]],
            DynamicsConfig::Reacher(_) => vec![
                s.q[0].cos(),
                s.q[0].sin(),
                s.q[1].cos(),
                s.q[1].sin(),
                s.qdot[0],
                s.qdot[1],
            ],
            DynamicsConfig::Hopper(_) => vec![s.q[1], s.q[2], s.q[3], s.qdot[0], s.qdot[1], s.qdot[2], s.qdot[3]],
        }
    }

    /// Planar position compared against the goal.
    pub fn effector(&self, s: &EnvState) -> [f64; 2] {
        match &self.dynamics {
            DynamicsConfig::PointMass(_) => [s.q[0], s.q[1]],
            DynamicsConfig::Cartpole(p) => p.pole_tip(s),
            DynamicsConfig::Reacher(p) => p.fingertip(s),
            DynamicsConfig::Hopper(_) => [s.q[0], s.q[1]],
        }
    }

    /// Forward position for locomotion, goal distance otherwise.
    pub fn info(&self, s: &EnvState) -> f64 {
        if self.family.is_locomotion() {
            s.q[0]
        } else {
            let e = self.effector(s);
            ((e[0] - self.goal[0]).powi(2) + (e[1] - self.goal[1]).powi(2)).sqrt()
        }
    }

    fn fell(&self, s: &EnvState) -> bool {
        match (&self.dynamics, self.family) {
            (DynamicsConfig::Cartpole(p), Family::CartpoleBalance) => {
                s.q[0].abs() > p.x_limit || s.q[1].abs() > p.theta_limit
            }
            (DynamicsConfig::Cartpole(p), _) => s.q[0].abs() > p.x_limit,
            (DynamicsConfig::Hopper(p), _) => p.fell(s),
            _ => false,
        }
    }

    /// Advance one control step. The action is clamped to `[-1, 1]`.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepResult> {
        check_len("action", self.action_dim(), action.len())?;
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::Numeric("NaN action".into()));
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let (q, qdot) = match &self.dynamics {
            DynamicsConfig::PointMass(p) => p.integrate(&state.q, &state.qdot, &a),
            DynamicsConfig::Cartpole(p) => p.integrate(&state.q, &state.qdot, &a),
            DynamicsConfig::Reacher(p) => p.integrate(&state.q, &state.qdot, &a),
            DynamicsConfig::Hopper(p) => p.integrate(&state.q, &state.qdot, &a),
        };
        let next_state = EnvState { q, qdot, t: state.t + 1 };
        if !next_state.is_finite() {
            return Err(Error::Numeric(format!(
                "{} state became non-finite at step {}; dt {} is too large for this config",
                self.family,
                state.t,
                self.dt()
            )));
        }
        let fell = self.fell(&next_state);
        let reward = self.reward_for(state, &next_state, &a, fell);
        let done = fell || next_state.t >= self.horizon;
        let info = self.info(&next_state);
        Ok(StepResult {
            next_state,
            reward,
            done,
            fell,
            info,
        })
    }

    fn reward_for(&self, prev: &EnvState, next: &EnvState, a: &[f64], fell: bool) -> f64 {
        let mode = &self.reward;
        match mode.kind {
            RewardKind::None => 0.0,
            RewardKind::Sparse { epsilon } => sparse_reward(self.effector(next), self.goal, epsilon),
            RewardKind::Uninformative => uninformative_reward(fell, mode),
            RewardKind::Dense => {
                let ctrl: f64 = a.iter().map(|v| v * v).sum();
                match self.family {
                    Family::PointMass | Family::Reacher2 => -self.info(next) - 0.01 * ctrl,
                    Family::CartpoleBalance => {
                        if fell {
                            -mode.fall_cost
                        } else {
                            mode.alive_bonus
                        }
                    }
                    Family::CartpoleSwingup => {
                        if fell {
                            -mode.fall_cost
                        } else {
                            0.5 * (1.0 + next.q[1].cos())
                        }
                    }
                    Family::HopperLite => {
                        let forward = (next.q[0] - prev.q[0]) / self.dt();
                        let survival = if fell { -mode.fall_cost } else { mode.alive_bonus };
                        forward + survival - 1e-3 * ctrl
                    }
                }
            }
        }
    }
}

/// Wrap to `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub(crate) fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be strictly positive, got {v}")))
    }
}

pub(crate) fn require_nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be non-negative, got {v}")))
    }
}

pub(crate) fn require_timestep(v: f64) -> Result<()> {
    require_positive("dt", v)?;
    if v > 0.05 {
        return Err(Error::invalid("dt", format!("must not exceed 0.05 s, got {v}")));
    }
    Ok(())
}
