//! Planar double integrator with linear damping and Coulomb friction.

use serde::{Deserialize, Serialize};

use super::{require_nonnegative, require_positive, require_timestep, Perturbation};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassParams {
    /// kg
    pub mass: f64,
    /// Linear velocity damping, N·s/m.
    pub damping: f64,
    /// Coulomb friction coefficient against the ground plane.
    pub friction: f64,
    /// m/s², only used for the friction normal force.
    pub gravity: f64,
    /// Force per unit action, N.
    pub max_force: f64,
    /// s
    pub dt: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        PointMassParams {
            mass: 1.0,
            damping: 0.5,
            friction: 0.02,
            gravity: 9.81,
            max_force: 2.0,
            dt: 0.02,
        }
    }
}

impl PointMassParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("mass", self.mass)?;
        require_nonnegative("damping", self.damping)?;
        require_nonnegative("friction", self.friction)?;
        require_nonnegative("gravity", self.gravity)?;
        require_positive("max_force", self.max_force)?;
        require_timestep(self.dt)
    }

    pub fn perturbed(&self, p: &Perturbation) -> Self {
        PointMassParams {
            mass: self.mass * p.density,
            damping: self.damping * p.damping,
            friction: self.friction * p.friction,
            ..self.clone()
        }
    }

    /// Semi-implicit Euler: velocity first (force, damping, then friction
    /// that can stop but never reverse the motion), then position with the
    /// new velocity.
    pub(super) fn integrate(&self, q: &[f64], qdot: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dt = self.dt;
        let mut v = [0.0; 2];
        for i in 0..2 {
            let force = a[i] * self.max_force;
            v[i] = qdot[i] + dt * (force - self.damping * qdot[i]) / self.mass;
        }
        let speed = v[0].hypot(v[1]);
        let drop = self.friction * self.gravity * dt;
        if speed > 0.0 && drop > 0.0 {
            let keep = (1.0 - drop / speed).max(0.0);
            v[0] *= keep;
            v[1] *= keep;
        }
        let q_next = vec![q[0] + dt * v[0], q[1] + dt * v[1]];
        (q_next, v.to_vec())
    }
}
