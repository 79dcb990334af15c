//! Follower and leader dynamics, formation displacements and the fixed-step
//! integrator shared by the plant simulation and the MPC predictions.
//!
//! Followers are integrator chains of order `r` over `n` output channels:
//! `x = [y, y', ..., y^(r-1)]` stacked in length-`n` segments, with the top
//! derivative driven by `f(x) + actuation(x, u)`.

mod builtin;
mod dynamics;
mod quadrotor;

pub use builtin::{builtin_example1, builtin_example2, ExampleSystem};
pub use dynamics::{BuiltinDynamics, FollowerDynamics, Integrator};
pub use quadrotor::Quadrotor;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A follower: dynamics plus the box `[-u_lo, u_hi]` on its physical inputs.
#[derive(Clone)]
pub struct FollowerModel {
    dynamics: Arc<dyn FollowerDynamics>,
    u_lo: DVector<f64>,
    u_hi: DVector<f64>,
}

impl fmt::Debug for FollowerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FollowerModel")
            .field("dynamics", &self.dynamics.name())
            .field("u_lo", &self.u_lo.as_slice())
            .field("u_hi", &self.u_hi.as_slice())
            .finish()
    }
}

impl FollowerModel {
    /// `u_lo` and `u_hi` are the (positive) magnitudes of the lower and upper
    /// input bounds.
    pub fn new(
        dynamics: Arc<dyn FollowerDynamics>,
        u_lo: DVector<f64>,
        u_hi: DVector<f64>,
    ) -> Result<Self> {
        let m = dynamics.input_dim();
        for (name, b) in [("lower input bound", &u_lo), ("upper input bound", &u_hi)] {
            if b.len() != m {
                return Err(Error::Dimension {
                    context: name.into(),
                    expected: m,
                    actual: b.len(),
                });
            }
            if b.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Config(format!(
                    "{name} magnitudes must be finite and positive"
                )));
            }
        }
        if dynamics.order() == 0 || dynamics.channels() == 0 {
            return Err(Error::Config("chain order and channel count must be positive".into()));
        }
        Ok(Self {
            dynamics,
            u_lo,
            u_hi,
        })
    }

    /// Symmetric box `[-bound, bound]`.
    pub fn symmetric(dynamics: Arc<dyn FollowerDynamics>, bound: DVector<f64>) -> Result<Self> {
        Self::new(dynamics, bound.clone(), bound)
    }

    pub fn dynamics(&self) -> &dyn FollowerDynamics {
        self.dynamics.as_ref()
    }

    pub fn order(&self) -> usize {
        self.dynamics.order()
    }

    pub fn channels(&self) -> usize {
        self.dynamics.channels()
    }

    pub fn state_dim(&self) -> usize {
        self.order() * self.channels()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn u_lo(&self) -> &DVector<f64> {
        &self.u_lo
    }

    pub fn u_hi(&self) -> &DVector<f64> {
        &self.u_hi
    }

    pub fn in_box(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .enumerate()
            .all(|(j, v)| *v >= -self.u_lo[j] && *v <= self.u_hi[j])
    }

    /// Top-derivative acceleration `f(x) + actuation(x, u)`.
    pub fn top_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.dynamics.drift(x) + self.dynamics.actuation(x, u)
    }
}

/// `[x_2; ...; x_r; f(x) + actuation(x, u)]`.
pub fn follower_derivative(
    model: &FollowerModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = model.state_dim();
    let n = model.channels();
    if x.len() != d {
        return Err(Error::Dimension {
            context: "follower state".into(),
            expected: d,
            actual: x.len(),
        });
    }
    if u.len() != model.input_dim() {
        return Err(Error::Dimension {
            context: "follower input".into(),
            expected: model.input_dim(),
            actual: u.len(),
        });
    }
    let mut dx = DVector::zeros(d);
    dx.rows_mut(0, d - n).copy_from(&x.rows(n, d - n));
    let top = model.top_derivative(x, u);
    if !top.iter().all(|v| v.is_finite()) {
        return Err(Error::non_finite(format!("{} dynamics", model.dynamics().name())));
    }
    dx.rows_mut(d - n, n).copy_from(&top);
    Ok(dx)
}

/// Virtual leader `xi' = S0 xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderModel {
    s0: DMatrix<f64>,
    xi0: DVector<f64>,
}

impl LeaderModel {
    pub fn new(s0: DMatrix<f64>, xi0: DVector<f64>) -> Result<Self> {
        if !s0.is_square() {
            return Err(Error::Dimension {
                context: "leader matrix columns".into(),
                expected: s0.nrows(),
                actual: s0.ncols(),
            });
        }
        if xi0.len() != s0.nrows() {
            return Err(Error::Dimension {
                context: "leader initial state".into(),
                expected: s0.nrows(),
                actual: xi0.len(),
            });
        }
        Ok(Self { s0, xi0 })
    }

    pub fn s0(&self) -> &DMatrix<f64> {
        &self.s0
    }

    pub fn xi0(&self) -> &DVector<f64> {
        &self.xi0
    }

    pub fn dim(&self) -> usize {
        self.xi0.len()
    }
}

pub fn leader_derivative(leader: &LeaderModel, xi: &DVector<f64>) -> DVector<f64> {
    &leader.s0 * xi
}

/// Desired offsets `Δ_i` of each follower's stacked state from the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    displacements: Vec<DVector<f64>>,
}

impl FormationSpec {
    pub fn new(displacements: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = displacements.first() {
            for (i, d) in displacements.iter().enumerate() {
                if d.len() != first.len() {
                    return Err(Error::Dimension {
                        context: format!("displacement of agent {}", i + 1),
                        expected: first.len(),
                        actual: d.len(),
                    });
                }
            }
        }
        Ok(Self { displacements })
    }

    pub fn agent_count(&self) -> usize {
        self.displacements.len()
    }

    pub fn displacement(&self, i: usize) -> &DVector<f64> {
        &self.displacements[i]
    }

    pub fn displacements(&self) -> &[DVector<f64>] {
        &self.displacements
    }

    /// `Δ_ij = Δ_i − Δ_j`, the only displacement data agent `i` stores for
    /// its in-neighbour `j`.
    pub fn relative(&self, i: usize, j: usize) -> DVector<f64> {
        &self.displacements[i] - &self.displacements[j]
    }
}

/// One classical fourth-order Runge–Kutta step of `state' = f(t, state)`.
pub fn rk4_step<F>(f: F, t: f64, state: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("integration step must be positive, got {h}")));
    }
    let check = |k: DVector<f64>, stage: &str| {
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::NumericDomain {
                what: format!("RK4 stage {stage}"),
                agent: None,
                t: Some(t),
            })
        }
    };
    let half = 0.5 * h;
    let k1 = check(f(t, state)?, "1")?;
    let k2 = check(f(t + half, &(state + &k1 * half))?, "2")?;
    let k3 = check(f(t + half, &(state + &k2 * half))?, "3")?;
    let k4 = check(f(t + h, &(state + &k3 * h))?, "4")?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-x)
    }

    fn integrate_decay(steps: usize) -> f64 {
        let h = 1.0 / steps as f64;
        let mut x = DVector::from_element(1, 1.0);
        for k in 0..steps {
            x = rk4_step(decay, k as f64 * h, &x, h).unwrap();
        }
        x[0]
    }

    #[test]
    fn rk4_single_step_on_decay() {
        let x = rk4_step(decay, 0.0, &DVector::from_element(1, 1.0), 0.1).unwrap();
        // 1 - h + h²/2 - h³/6 + h⁴/24 at h = 0.1
        let by_hand = 1.0 - 0.1 + 0.005 - 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((x[0] - by_hand).abs() < 1e-15);
        assert!((x[0] - 0.90483750).abs() < 5e-9);
    }

    #[test]
    fn rk4_zero_field_is_identity() {
        let s = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let out = rk4_step(|_, x| Ok(DVector::zeros(x.len())), 0.0, &s, 0.3).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn rk4_convergence_order() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate_decay(10) - exact).abs();
        let e2 = (integrate_decay(20) - exact).abs();
        let order = (e1 / e2).log2();
        assert!((3.8..=4.2).contains(&order), "order {order}");
    }

    #[test]
    fn rk4_rejects_nonfinite_stage() {
        let r = rk4_step(
            |_, x| Ok(x.map(|v| 1.0 / (v - 1.0))),
            0.0,
            &DVector::from_element(1, 1.0),
            0.1,
        );
        assert!(matches!(r, Err(Error::NumericDomain { .. })));
        assert!(rk4_step(decay, 0.0, &DVector::zeros(1), 0.0).is_err());
    }

    #[test]
    fn leader_examples() {
        let ex = builtin_example1();
        assert_eq!(
            leader_derivative(&ex.leader, ex.leader.xi0()).as_slice(),
            &[0.0, 0.0, -1.0]
        );
        let zero = LeaderModel::new(DMatrix::zeros(2, 2), DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(leader_derivative(&zero, zero.xi0()), DVector::zeros(2));
    }

    #[test]
    fn example1_follower1_derivative() {
        let ex = builtin_example1();
        let dx = follower_derivative(
            &ex.followers[0],
            &DVector::from_vec(vec![1.3, 0.0, 0.0]),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(dx[0], 0.0);
        assert_eq!(dx[1], 0.0);
        assert!((dx[2] + 2.197).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ex = builtin_example1();
        assert!(matches!(
            follower_derivative(&ex.followers[0], &DVector::zeros(2), &DVector::zeros(1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rejects_nonpositive_bounds() {
        let dynamics: Arc<dyn FollowerDynamics> = Arc::new(Integrator::new(2, 1));
        assert!(FollowerModel::symmetric(dynamics.clone(), DVector::from_element(1, 0.0)).is_err());
        assert!(FollowerModel::symmetric(dynamics, DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn relative_displacement_is_exact_difference() {
        let ex = builtin_example2();
        let d = ex.formation.relative(3, 1);
        assert_eq!(d, ex.formation.displacement(3) - ex.formation.displacement(1));
    }
}
