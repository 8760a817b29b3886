//! Planar one-legged hopper.
//!
//! Generalized coordinates `q = (x, z, theta, l)`: torso centre of mass,
//! torso pitch (leg rigidly aligned with the torso axis) and prismatic leg
//! length. A point foot of mass `foot_mass` sits at
//! `(x + l sin theta, z - l cos theta)`. The leg is a spring-damper with an
//! actuated thrust; pitch is driven by a torque on the torso. Ground contact
//! acts on the foot, either as a penalty spring or as a velocity-level
//! impulse. See `docs/dynamics.md` for the mass matrix derivation.

use serde::{Deserialize, Serialize};

use super::{require_nonnegative, require_positive, require_timestep, EnvState, Perturbation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactModel {
    /// Spring-damper normal force, Coulomb-clamped viscous friction.
    Penalty,
    /// Inelastic velocity projection with `(1 - mu)` tangential scaling.
    Impulse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopperParams {
    /// kg
    pub torso_mass: f64,
    /// kg·m²
    pub torso_inertia: f64,
    /// kg
    pub foot_mass: f64,
    /// m
    pub leg_rest_length: f64,
    /// m
    pub leg_min_length: f64,
    /// m
    pub leg_max_length: f64,
    /// N/m
    pub leg_stiffness: f64,
    /// N·s/m
    pub leg_damping: f64,
    /// N·m·s/rad
    pub pitch_damping: f64,
    /// Leg force per unit action, N.
    pub max_thrust: f64,
    /// Pitch torque per unit action, N·m.
    pub max_torque: f64,
    /// m/s²
    pub gravity: f64,
    /// Ground friction coefficient.
    pub friction: f64,
    pub contact_model: ContactModel,
    /// Penalty normal stiffness, N/m.
    pub contact_stiffness: f64,
    /// Penalty normal damping, N·s/m.
    pub contact_damping: f64,
    /// Penalty tangential (slip) damping before the Coulomb clamp, N·s/m.
    pub slip_damping: f64,
    /// Episode fails when the torso drops below this height, m.
    pub fall_height: f64,
    /// Episode fails when |pitch| exceeds this, rad.
    pub fall_angle: f64,
    /// Control interval, s.
    pub dt: f64,
    /// Integration substeps per control interval.
    pub substeps: usize,
}

impl Default for HopperParams {
    fn default() -> Self {
        HopperParams {
            torso_mass: 3.0,
            torso_inertia: 0.25,
            foot_mass: 0.3,
            leg_rest_length: 1.0,
            leg_min_length: 0.6,
            leg_max_length: 1.15,
            leg_stiffness: 1000.0,
            leg_damping: 10.0,
            pitch_damping: 0.5,
            max_thrust: 80.0,
            max_torque: 4.0,
            gravity: 9.81,
            friction: 0.8,
            contact_model: ContactModel::Penalty,
            contact_stiffness: 5000.0,
            contact_damping: 20.0,
            slip_damping: 30.0,
            fall_height: 0.6,
            fall_angle: 1.0,
            dt: 0.01,
            substeps: 4,
        }
    }
}

type Vec4 = [f64; 4];
type Mat4 = [[f64; 4]; 4];

impl HopperParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("torso_mass", self.torso_mass)?;
        require_positive("torso_inertia", self.torso_inertia)?;
        require_positive("foot_mass", self.foot_mass)?;
        require_positive("leg_rest_length", self.leg_rest_length)?;
        require_positive("leg_min_length", self.leg_min_length)?;
        require_positive("leg_max_length", self.leg_max_length)?;
        if !(self.leg_min_length < self.leg_rest_length && self.leg_rest_length <= self.leg_max_length) {
            return Err(Error::invalid("leg_rest_length", "must lie in (leg_min_length, leg_max_length]"));
        }
        require_positive("leg_stiffness", self.leg_stiffness)?;
        require_nonnegative("leg_damping", self.leg_damping)?;
        require_nonnegative("pitch_damping", self.pitch_damping)?;
        require_positive("max_thrust", self.max_thrust)?;
        require_positive("max_torque", self.max_torque)?;
        require_nonnegative("gravity", self.gravity)?;
        require_nonnegative("friction", self.friction)?;
        if self.contact_model == ContactModel::Impulse && self.friction > 1.0 {
            return Err(Error::invalid("friction", "impulse contact needs friction in [0, 1]"));
        }
        require_positive("contact_stiffness", self.contact_stiffness)?;
        require_nonnegative("contact_damping", self.contact_damping)?;
        require_nonnegative("slip_damping", self.slip_damping)?;
        require_positive("fall_height", self.fall_height)?;
        require_positive("fall_angle", self.fall_angle)?;
        require_timestep(self.dt)?;
        if self.substeps == 0 {
            return Err(Error::invalid("substeps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn perturbed(&self, p: &Perturbation) -> Self {
        HopperParams {
            torso_mass: self.torso_mass * p.density,
            torso_inertia: self.torso_inertia * p.density,
            foot_mass: self.foot_mass * p.density,
            leg_damping: self.leg_damping * p.damping,
            pitch_damping: self.pitch_damping * p.damping,
            friction: self.friction * p.friction,
            ..self.clone()
        }
    }

    /// Upright, foot on the ground, leg compressed under the torso weight.
    pub fn rest_state(&self) -> (Vec<f64>, Vec<f64>) {
        let l = (self.leg_rest_length - self.torso_mass * self.gravity / self.leg_stiffness)
            .max(self.leg_min_length);
        (vec![0.0, l, 0.0, l], vec![0.0; 4])
    }

    pub(super) fn fell(&self, s: &EnvState) -> bool {
        s.q[1] < self.fall_height || s.q[2].abs() > self.fall_angle
    }

    pub fn foot(&self, q: &[f64]) -> [f64; 2] {
        let (s, c) = q[2].sin_cos();
        [q[0] + q[3] * s, q[1] - q[3] * c]
    }

    /// Rows of the foot Jacobian `d foot / d q`.
    fn foot_jacobian(q: &[f64]) -> [Vec4; 2] {
        let (s, c) = q[2].sin_cos();
        let l = q[3];
        [[1.0, 0.0, l * c, s], [0.0, 1.0, l * s, -c]]
    }

    fn mass_matrix(&self, q: &[f64]) -> Mat4 {
        let (s, c) = q[2].sin_cos();
        let l = q[3];
        let (mt, mf) = (self.torso_mass, self.foot_mass);
        let m = mt + mf;
        [
            [m, 0.0, mf * l * c, mf * s],
            [0.0, m, mf * l * s, -mf * c],
            [mf * l * c, mf * l * s, self.torso_inertia + mf * l * l, 0.0],
            [mf * s, -mf * c, 0.0, mf],
        ]
    }

    /// `Q - h`: applied generalized forces minus velocity-product terms.
    fn force_balance(&self, q: &[f64], qd: &[f64], thrust: f64, torque: f64) -> Vec4 {
        let (s, c) = q[2].sin_cos();
        let (l, thd, ld) = (q[3], qd[2], qd[3]);
        let mf = self.foot_mass;
        let jac = Self::foot_jacobian(q);

        let mut f = [
            0.0,
            -self.torso_mass * self.gravity,
            torque - self.pitch_damping * thd,
            self.leg_stiffness * (self.leg_rest_length - l) - self.leg_damping * ld + thrust,
        ];
        // Foot: gravity minus the velocity-product part of its acceleration.
        let bias = [2.0 * ld * c * thd - l * s * thd * thd, 2.0 * ld * s * thd + l * c * thd * thd];
        let mut foot_force = [-mf * bias[0], -mf * self.gravity - mf * bias[1]];
        if self.contact_model == ContactModel::Penalty {
            let pen = -(q[1] - l * c);
            if pen > 0.0 {
                let vx = dot4(&jac[0], qd);
                let vz = dot4(&jac[1], qd);
                let normal = (self.contact_stiffness * pen - self.contact_damping * vz).max(0.0);
                let limit = self.friction * normal;
                let tangential = (-self.slip_damping * vx).clamp(-limit, limit);
                foot_force[0] += tangential;
                foot_force[1] += normal;
            }
        }
        for i in 0..4 {
            f[i] += jac[0][i] * foot_force[0] + jac[1][i] * foot_force[1];
        }
        f
    }

    /// Inelastic contact: remove approaching normal velocity (landing the foot
    /// exactly on the ground), scale sliding velocity by `1 - mu`.
    fn resolve_impulse(&self, q: &[f64], qd: &mut [f64], minv: &Mat4, h: f64) {
        let foot_z = self.foot(q)[1];
        let jac = Self::foot_jacobian(q);
        let vn = dot4(&jac[1], qd);
        let target_n = if foot_z >= 0.0 { -foot_z / h } else { -0.2 * foot_z / h };
        if vn >= target_n {
            return;
        }
        let vt = dot4(&jac[0], qd);
        let target_t = (1.0 - self.friction) * vt;
        // Effective inverse mass at the foot.
        let mj: [Vec4; 2] = [mat_vec(minv, &jac[0]), mat_vec(minv, &jac[1])];
        let a_tt = dot4(&jac[0], &mj[0]);
        let a_tn = dot4(&jac[0], &mj[1]);
        let a_nn = dot4(&jac[1], &mj[1]);
        let (dt_, dn) = (target_t - vt, target_n - vn);
        let det = a_tt * a_nn - a_tn * a_tn;
        let (mut pt, mut pn) = ((a_nn * dt_ - a_tn * dn) / det, (a_tt * dn - a_tn * dt_) / det);
        if pn <= 0.0 || !det.is_finite() || det.abs() < 1e-12 {
            pt = 0.0;
            pn = dn / a_nn;
        }
        for i in 0..4 {
            qd[i] += mj[0][i] * pt + mj[1][i] * pn;
        }
    }

    /// Stop the prismatic joint at its limits with an inelastic impulse
    /// along the leg coordinate.
    fn enforce_leg_limits(&self, q: &[f64], qd: &mut [f64], minv: &Mat4, h: f64) {
        let predicted = q[3] + h * qd[3];
        let target = if predicted < self.leg_min_length {
            (self.leg_min_length - q[3]) / h
        } else if predicted > self.leg_max_length {
            (self.leg_max_length - q[3]) / h
        } else {
            return;
        };
        let col = [minv[0][3], minv[1][3], minv[2][3], minv[3][3]];
        let p = (target - qd[3]) / col[3];
        for i in 0..4 {
            qd[i] += col[i] * p;
        }
    }

    pub(super) fn integrate(&self, q: &[f64], qdot: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let thrust = a[0] * self.max_thrust;
        let torque = a[1] * self.max_torque;
        let h = self.dt / self.substeps as f64;
        let mut q: Vec4 = [q[0], q[1], q[2], q[3]];
        let mut qd: Vec4 = [qdot[0], qdot[1], qdot[2], qdot[3]];
        for _ in 0..self.substeps {
            let m = self.mass_matrix(&q);
            let minv = invert4(&m);
            let f = self.force_balance(&q, &qd, thrust, torque);
            let acc = mat_vec(&minv, &f);
            for i in 0..4 {
                qd[i] += h * acc[i];
            }
            self.enforce_leg_limits(&q, &mut qd, &minv, h);
            if self.contact_model == ContactModel::Impulse {
                self.resolve_impulse(&q, &mut qd, &minv, h);
            }
            for i in 0..4 {
                q[i] += h * qd[i];
            }
        }
        (q.to_vec(), qd.to_vec())
    }
}

fn dot4(a: &Vec4, b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn mat_vec(m: &Mat4, v: &[f64]) -> Vec4 {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = dot4(&m[i], v);
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting. The mass matrix is symmetric
/// positive definite, so pivots never vanish.
fn invert4(m: &Mat4) -> Mat4 {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for k in 0..4 {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..4 {
                        a[r][k] -= f * a[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    inv
}
