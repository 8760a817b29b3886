//! Two-link planar arm with uniform rods and viscous joint damping.

use serde::{Deserialize, Serialize};

use super::{require_nonnegative, require_positive, require_timestep, EnvState, Perturbation};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReacherParams {
    /// m
    pub link1_length: f64,
    /// m
    pub link2_length: f64,
    /// kg
    pub link1_mass: f64,
    /// kg
    pub link2_mass: f64,
    /// N·m·s/rad, both joints.
    pub joint_damping: f64,
    /// In-plane gravity along -y, m/s². Zero for a table-top arm.
    pub gravity: f64,
    /// Torque per unit action, N·m.
    pub max_torque: f64,
    /// s
    pub dt: f64,
}

impl Default for ReacherParams {
    fn default() -> Self {
        ReacherParams {
            link1_length: 0.5,
            link2_length: 0.5,
            link1_mass: 1.0,
            link2_mass: 1.0,
            joint_damping: 0.5,
            gravity: 0.0,
            max_torque: 2.0,
            dt: 0.02,
        }
    }
}

impl ReacherParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("link1_length", self.link1_length)?;
        require_positive("link2_length", self.link2_length)?;
        require_positive("link1_mass", self.link1_mass)?;
        require_positive("link2_mass", self.link2_mass)?;
        require_nonnegative("joint_damping", self.joint_damping)?;
        require_nonnegative("gravity", self.gravity)?;
        require_positive("max_torque", self.max_torque)?;
        require_timestep(self.dt)
    }

    pub fn perturbed(&self, p: &Perturbation) -> Self {
        ReacherParams {
            link1_mass: self.link1_mass * p.density,
            link2_mass: self.link2_mass * p.density,
            joint_damping: self.joint_damping * p.damping,
            ..self.clone()
        }
    }

    pub(super) fn fingertip(&self, s: &EnvState) -> [f64; 2] {
        let (q1, q12) = (s.q[0], s.q[0] + s.q[1]);
        [
            self.link1_length * q1.cos() + self.link2_length * q12.cos(),
            self.link1_length * q1.sin() + self.link2_length * q12.sin(),
        ]
    }

    /// Joint accelerations from `M(q) qdd = tau - C(q, qd) - G(q) - b qd`.
    pub(super) fn accelerations(&self, q: &[f64], qdot: &[f64], tau: [f64; 2]) -> [f64; 2] {
        let (l1, m1, m2) = (self.link1_length, self.link1_mass, self.link2_mass);
        let (lc1, lc2) = (0.5 * self.link1_length, 0.5 * self.link2_length);
        let i1 = m1 * l1 * l1 / 12.0;
        let i2 = m2 * self.link2_length * self.link2_length / 12.0;
        let (s2, c2) = q[1].sin_cos();
        let m11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2);
        let m12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
        let m22 = i2 + m2 * lc2 * lc2;
        let h = m2 * l1 * lc2 * s2;
        let coriolis = [-h * (2.0 * qdot[0] * qdot[1] + qdot[1] * qdot[1]), h * qdot[0] * qdot[0]];
        let g = self.gravity;
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let gravity = [(m1 * lc1 + m2 * l1) * g * c1 + m2 * lc2 * g * c12, m2 * lc2 * g * c12];
        let rhs = [
            tau[0] - coriolis[0] - gravity[0] - self.joint_damping * qdot[0],
            tau[1] - coriolis[1] - gravity[1] - self.joint_damping * qdot[1],
        ];
        let det = m11 * m22 - m12 * m12;
        [(m22 * rhs[0] - m12 * rhs[1]) / det, (m11 * rhs[1] - m12 * rhs[0]) / det]
    }

    pub(super) fn integrate(&self, q: &[f64], qdot: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tau = [a[0] * self.max_torque, a[1] * self.max_torque];
        let acc = self.accelerations(q, qdot, tau);
        let v = vec![qdot[0] + self.dt * acc[0], qdot[1] + self.dt * acc[1]];
        let q_next = vec![q[0] + self.dt * v[0], q[1] + self.dt * v[1]];
        (q_next, v)
    }
}
