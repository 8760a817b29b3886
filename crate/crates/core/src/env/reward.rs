use serde::{Deserialize, Serialize};

use crate::advantage::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardKind {
    /// Family-specific shaped reward (distance, uprightness, forward progress).
    Dense,
    /// 1 inside an `epsilon` ball around the goal, 0 elsewhere.
    Sparse { epsilon: f64 },
    /// Survival only: alive bonus per step, fall cost on falling.
    Uninformative,
    /// No environment reward at all.
    None,
}

/// Reward configuration of one system.
///
/// Serialized flat: `{"kind": "sparse", "epsilon": 0.1, "alive_bonus": 1.0, "fall_cost": 0.0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRewardMode", into = "RawRewardMode")]
pub struct RewardMode {
    pub kind: RewardKind,
    pub alive_bonus: f64,
    pub fall_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Dense,
    Sparse,
    Uninformative,
    None,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRewardMode {
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default = "default_alive")]
    alive_bonus: f64,
    #[serde(default)]
    fall_cost: f64,
}

fn default_alive() -> f64 {
    1.0
}

impl TryFrom<RawRewardMode> for RewardMode {
    type Error = Error;

    fn try_from(raw: RawRewardMode) -> Result<Self> {
        let kind = match (raw.kind, raw.epsilon) {
            (RawKind::Sparse, Some(epsilon)) => RewardKind::Sparse { epsilon },
            (RawKind::Sparse, None) => return Err(Error::invalid("epsilon", "sparse rewards need an epsilon")),
            (_, Some(_)) => return Err(Error::invalid("epsilon", "only sparse rewards take an epsilon")),
            (RawKind::Dense, None) => RewardKind::Dense,
            (RawKind::Uninformative, None) => RewardKind::Uninformative,
            (RawKind::None, None) => RewardKind::None,
        };
        let mode = RewardMode {
            kind,
            alive_bonus: raw.alive_bonus,
            fall_cost: raw.fall_cost,
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl From<RewardMode> for RawRewardMode {
    fn from(m: RewardMode) -> Self {
        let (kind, epsilon) = match m.kind {
            RewardKind::Dense => (RawKind::Dense, None),
            RewardKind::Sparse { epsilon } => (RawKind::Sparse, Some(epsilon)),
            RewardKind::Uninformative => (RawKind::Uninformative, None),
            RewardKind::None => (RawKind::None, None),
        };
        RawRewardMode {
            kind,
            epsilon,
            alive_bonus: m.alive_bonus,
            fall_cost: m.fall_cost,
        }
    }
}

impl RewardMode {
    pub fn dense() -> Self {
        RewardMode {
            kind: RewardKind::Dense,
            alive_bonus: 1.0,
            fall_cost: 0.0,
        }
    }

    pub fn sparse(epsilon: f64) -> Self {
        RewardMode {
            kind: RewardKind::Sparse { epsilon },
            ..RewardMode::dense()
        }
    }

    pub fn uninformative(alive_bonus: f64, fall_cost: f64) -> Self {
        RewardMode {
            kind: RewardKind::Uninformative,
            alive_bonus,
            fall_cost,
        }
    }

    pub fn none() -> Self {
        RewardMode {
            kind: RewardKind::None,
            ..RewardMode::dense()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RewardKind::Sparse { epsilon } = self.kind {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
            }
        }
        if !self.alive_bonus.is_finite() {
            return Err(Error::invalid("alive_bonus", "must be finite"));
        }
        if !self.fall_cost.is_finite() {
            return Err(Error::invalid("fall_cost", "must be finite"));
        }
        Ok(())
    }
}

/// 1.0 strictly inside the `epsilon` ball around `goal`, else 0.0.
pub fn sparse_reward(position: [f64; 2], goal: [f64; 2], epsilon: f64) -> f64 {
    let d = ((position[0] - goal[0]).powi(2) + (position[1] - goal[1]).powi(2)).sqrt();
    if d < epsilon {
        1.0
    } else {
        0.0
    }
}

/// Survival-only reward. Never looks at velocity.
pub fn uninformative_reward(fell: bool, cfg: &RewardMode) -> f64 {
    if fell {
        -cfg.fall_cost
    } else {
        cfg.alive_bonus
    }
}

/// Final minus initial forward position of a locomotion rollout.
pub fn forward_distance_metric(traj: &Trajectory) -> f64 {
    match (traj.infos.first(), traj.infos.last()) {
        (Some(first), Some(last)) => last - first,
        _ => 0.0,
    }
}
