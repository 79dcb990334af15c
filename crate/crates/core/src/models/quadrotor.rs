//! Quadrotor outer-loop translational dynamics.
//!
//! State `[position; velocity]` (r = 2, n = 3). Physical inputs are
//! `[u_F, φ, θ, ψ]`: thrust deviation from hover in newtons, then the
//! commanded roll, pitch and yaw. The thrust direction is the body z axis
//! after a ZYX (yaw-pitch-roll) rotation, so the acceleration is
//! `(m g + u_F)/m · d(φ, θ, ψ) − [0, 0, g]`. Hover is `u = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use super::{FollowerDynamics, FollowerModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrotor {
    pub mass: f64,
    pub gravity: f64,
}

impl Default for Quadrotor {
    fn default() -> Self {
        Self {
            mass: 2.618,
            gravity: 9.81,
        }
    }
}

impl Quadrotor {
    /// Default box: `|u_F| ≤ 4`, `|φ|, |θ| ≤ 0.5`, `|ψ| ≤ 0.1`.
    pub fn default_bounds() -> DVector<f64> {
        DVector::from_vec(vec![4.0, 0.5, 0.5, 0.1])
    }

    pub fn model(self) -> FollowerModel {
        FollowerModel::symmetric(Arc::new(self), Self::default_bounds())
            .expect("default quadrotor bounds are valid")
    }

    /// Unit thrust direction for roll `phi`, pitch `theta`, yaw `psi`.
    pub fn thrust_direction(phi: f64, theta: f64, psi: f64) -> Vector3<f64> {
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        Vector3::new(cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf)
    }

    fn thrust_ratio(&self, u_f: f64) -> f64 {
        (self.mass * self.gravity + u_f) / self.mass
    }
}

impl FollowerDynamics for Quadrotor {
    fn name(&self) -> &str {
        "quadrotor"
    }

    fn order(&self) -> usize {
        2
    }

    fn channels(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn actuation(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let d = Self::thrust_direction(u[1], u[2], u[3]);
        let a = d * self.thrust_ratio(u[0]) - Vector3::new(0.0, 0.0, self.gravity);
        DVector::from_column_slice(a.as_slice())
    }

    fn input_jacobian(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (phi, theta, psi) = (u[1], u[2], u[3]);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        let ratio = self.thrust_ratio(u[0]);
        let d = Self::thrust_direction(phi, theta, psi);
        let d_phi = Vector3::new(-cp * st * sf + sp * cf, -sp * st * sf - cp * cf, -ct * sf);
        let d_theta = Vector3::new(cp * ct * cf, sp * ct * cf, -st * cf);
        let d_psi = Vector3::new(-sp * st * cf + cp * sf, cp * st * cf + sp * sf, 0.0);
        let mut j = DMatrix::zeros(3, 4);
        j.column_mut(0).copy_from(&(d / self.mass));
        j.column_mut(1).copy_from(&(d_phi * ratio));
        j.column_mut(2).copy_from(&(d_theta * ratio));
        j.column_mut(3).copy_from(&(d_psi * ratio));
        j
    }

    fn is_affine(&self) -> bool {
        false
    }

    /// Exact inverse with zero yaw: thrust magnitude from `‖w + g e3‖`, roll
    /// and pitch from the required direction.
    fn invert_actuation(&self, _x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let total = Vector3::new(w[0], w[1], w[2] + self.gravity);
        let norm = total.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::SingularGain {
                agent: None,
                condition: f64::INFINITY,
            });
        }
        let d = total / norm;
        let phi = (-d.y).clamp(-1.0, 1.0).asin();
        let theta = d.x.atan2(d.z);
        Ok(DVector::from_vec(vec![
            self.mass * norm - self.mass * self.gravity,
            phi,
            theta,
            0.0,
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_is_equilibrium() {
        let q = Quadrotor::default();
        let a = q.actuation(&DVector::zeros(6), &DVector::zeros(4));
        assert!(a.norm() < 1e-15);
    }

    #[test]
    fn inverse_reproduces_requested_acceleration() {
        let q = Quadrotor::default();
        for w in [[0.3, -0.2, 0.5], [1.0, 1.0, -1.0], [0.0, 0.0, 0.0], [-2.0, 0.5, 1.4]] {
            let w = DVector::from_row_slice(&w);
            let u = q.invert_actuation(&DVector::zeros(6), &w).unwrap();
            assert_eq!(u[3], 0.0);
            let back = q.actuation(&DVector::zeros(6), &u);
            assert!((back - w).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let q = Quadrotor::default();
        let x = DVector::zeros(6);
        let u = DVector::from_vec(vec![0.7, 0.2, -0.3, 0.05]);
        let j = q.input_jacobian(&x, &u);
        for k in 0..4 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let fd = (q.actuation(&x, &up) - q.actuation(&x, &dn)) / 2e-6;
            assert!((fd - j.column(k)).norm() < 1e-8, "column {k}");
        }
    }

    #[test]
    fn thrust_direction_is_unit() {
        let d = Quadrotor::thrust_direction(0.4, -0.3, 0.1);
        assert!((d.norm() - 1.0).abs() < 1e-15);
    }
}
