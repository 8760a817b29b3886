//! Cart with a hinged pole: frictionless-pivot equations extended with
//! viscous cart friction and pivot damping.
//!
//! `q = (x, theta)` with `theta = 0` upright, `qdot = (xdot, thetadot)`.

use serde::{Deserialize, Serialize};

use super::{require_nonnegative, require_positive, require_timestep, EnvState, Perturbation};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    /// kg
    pub cart_mass: f64,
    /// kg
    pub pole_mass: f64,
    /// Half the pole length, m.
    pub pole_half_length: f64,
    /// m/s²
    pub gravity: f64,
    /// Viscous cart friction, N·s/m.
    pub cart_friction: f64,
    /// Pivot damping, N·m·s/rad.
    pub pivot_damping: f64,
    /// Force per unit action, N.
    pub max_force: f64,
    /// Track half-width, m.
    pub x_limit: f64,
    /// Balance task fails beyond this angle, rad.
    pub theta_limit: f64,
    /// s
    pub dt: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.81,
            cart_friction: 0.1,
            pivot_damping: 0.002,
            max_force: 10.0,
            x_limit: 2.4,
            theta_limit: 12f64.to_radians(),
            dt: 0.02,
        }
    }
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("cart_mass", self.cart_mass)?;
        require_positive("pole_mass", self.pole_mass)?;
        require_positive("pole_half_length", self.pole_half_length)?;
        require_nonnegative("gravity", self.gravity)?;
        require_nonnegative("cart_friction", self.cart_friction)?;
        require_nonnegative("pivot_damping", self.pivot_damping)?;
        require_positive("max_force", self.max_force)?;
        require_positive("x_limit", self.x_limit)?;
        require_positive("theta_limit", self.theta_limit)?;
        require_timestep(self.dt)
    }

    pub fn perturbed(&self, p: &Perturbation) -> Self {
        CartpoleParams {
            cart_mass: self.cart_mass * p.density,
            pole_mass: self.pole_mass * p.density,
            pivot_damping: self.pivot_damping * p.damping,
            cart_friction: self.cart_friction * p.friction,
            ..self.clone()
        }
    }

    pub(super) fn pole_tip(&self, s: &EnvState) -> [f64; 2] {
        let l2 = 2.0 * self.pole_half_length;
        [s.q[0] + l2 * s.q[1].sin(), l2 * s.q[1].cos()]
    }

    pub(super) fn accelerations(&self, q: &[f64], qdot: &[f64], force: f64) -> (f64, f64) {
        let (theta, xdot, thetadot) = (q[1], qdot[0], qdot[1]);
        let total = self.cart_mass + self.pole_mass;
        let l = self.pole_half_length;
        let (sin, cos) = theta.sin_cos();
        let push = force - self.cart_friction * xdot;
        let temp = (push + self.pole_mass * l * thetadot * thetadot * sin) / total;
        let theta_acc = (self.gravity * sin - cos * temp - self.pivot_damping * thetadot / (self.pole_mass * l))
            / (l * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let x_acc = temp - self.pole_mass * l * theta_acc * cos / total;
        (x_acc, theta_acc)
    }

    pub(super) fn integrate(&self, q: &[f64], qdot: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (x_acc, theta_acc) = self.accelerations(q, qdot, a[0] * self.max_force);
        let v = vec![qdot[0] + self.dt * x_acc, qdot[1] + self.dt * theta_acc];
        let q_next = vec![q[0] + self.dt * v[0], q[1] + self.dt * v[1]];
        (q_next, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, DynamicsConfig, Family, RewardMode, RewardKind};

    #[test]
    fn upright_without_gravity_is_fixed_point() {
        let p = CartpoleParams { gravity: 0.0, ..CartpoleParams::default() };
        let e = make_env(Family::CartpoleBalance, DynamicsConfig::Cartpole(p), RewardMode::dense()).unwrap();
        let mut s = EnvState { q: vec![0.0, 0.0], qdot: vec![0.0, 0.0], t: 0 };
        for _ in 0..100 {
            let r = e.step(&s, &[0.0]).unwrap();
            assert!(!r.fell);
            s = r.next_state;
        }
        assert_eq!(s.q, vec![0.0, 0.0]);
    }

    #[test]
    fn tilted_pole_falls_and_terminates() {
        let e = make_env(Family::CartpoleBalance, Family::CartpoleBalance.default_dynamics(), RewardMode::dense()).unwrap();
        let mut s = EnvState { q: vec![0.0, 0.05], qdot: vec![0.0, 0.0], t: 0 };
        let mut steps = 0;
        loop {
            let r = e.step(&s, &[0.0]).unwrap();
            steps += 1;
            if r.done {
                assert!(r.fell);
                assert_eq!(r.reward, 0.0);
                break;
            }
            assert_eq!(r.reward, 1.0);
            s = r.next_state;
        }
        assert!(steps < 100);
    }

    /// Without friction the pole equation reduces to the classic
    /// `g sin(theta) / (l (4/3 - m cos^2 / M))` at rest.
    #[test]
    fn static_angular_acceleration_closed_form() {
        let p = CartpoleParams { cart_friction: 0.0, pivot_damping: 0.0, ..CartpoleParams::default() };
        let th: f64 = 0.3;
        let (_, acc) = p.accelerations(&[0.0, th], &[0.0, 0.0], 0.0);
        let total = p.cart_mass + p.pole_mass;
        let want = p.gravity * th.sin() / (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * th.cos().powi(2) / total));
        assert!((acc - want).abs() < 1e-12);
    }

    #[test]
    fn swingup_tip_at_goal_when_upright() {
        let e = make_env(
            Family::CartpoleSwingup,
            Family::CartpoleSwingup.default_dynamics(),
            RewardMode { kind: RewardKind::Sparse { epsilon: 0.1 }, ..RewardMode::dense() },
        )
        .unwrap();
        let s = EnvState { q: vec![0.0, 0.0], qdot: vec![0.0, 0.0], t: 0 };
        assert_eq!(e.effector(&s), e.goal());
        assert_eq!(e.step(&s, &[0.0]).unwrap().reward, 1.0);
    }
}
