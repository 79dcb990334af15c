//! Open-loop prediction of one follower and of its leader estimate over the
//! horizon, and the quadrature of the MPC cost.

use nalgebra::{DMatrix, DVector};

use super::{fallback_from_terms, sliding_surface, ControlProfile, MpcSetup, SlidingParams, StabilityTerms};
use crate::error::{Error, Result};
use crate::models::{follower_derivative, rk4_step, FollowerModel};

/// Predicted trajectories on the substep grid, `samples · substeps + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Offsets from the current control instant.
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
}

/// Per-segment cost terms of one profile, kept so that a change in a single
/// sample only re-simulates the horizon from that sample onwards.
#[derive(Debug, Clone)]
pub(crate) struct CostCache {
    boundary: Vec<DVector<f64>>,
    surface_cost: Vec<f64>,
    input_cost: Vec<f64>,
}

impl CostCache {
    pub(crate) fn total(&self) -> f64 {
        self.surface_cost.iter().sum::<f64>() + self.input_cost.iter().sum::<f64>()
    }
}

/// Prediction context frozen at one control instant: the measured state, the
/// leader estimate `Ŝ`, and the displacement estimate `Δ̂`.
pub struct Predictor<'a> {
    model: &'a FollowerModel,
    params: &'a SlidingParams,
    setup: &'a MpcSetup,
    x0: DVector<f64>,
    s_hat: DMatrix<f64>,
    delta_hat: DVector<f64>,
    leader: Vec<DVector<f64>>,
}

impl<'a> Predictor<'a> {
    /// Integrates `ξ' = Ŝ ξ` from `xi_start` once; it does not depend on the
    /// input profile.
    pub fn new(
        model: &'a FollowerModel,
        params: &'a SlidingParams,
        setup: &'a MpcSetup,
        x0: DVector<f64>,
        xi_start: DVector<f64>,
        s_hat: DMatrix<f64>,
        delta_hat: DVector<f64>,
    ) -> Result<Self> {
        let h = setup.step();
        let nodes = setup.samples * setup.substeps;
        let mut leader = Vec::with_capacity(nodes + 1);
        leader.push(xi_start);
        for k in 0..nodes {
            let next = rk4_step(|_, xi| Ok(&s_hat * xi), k as f64 * h, &leader[k], h)?;
            leader.push(next);
        }
        Ok(Self {
            model,
            params,
            setup,
            x0,
            s_hat,
            delta_hat,
            leader,
        })
    }

    pub fn leader_nodes(&self) -> &[DVector<f64>] {
        &self.leader
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn setup(&self) -> &MpcSetup {
        self.setup
    }

    fn check_profile(&self, profile: &ControlProfile) -> Result<()> {
        if profile.len() != self.setup.samples {
            return Err(Error::Dimension {
                context: "control profile samples".into(),
                expected: self.setup.samples,
                actual: profile.len(),
            });
        }
        Ok(())
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        rk4_step(|_, x| follower_derivative(self.model, x, u), t, x, self.setup.step())
    }

    fn surface_weight(&self, x: &DVector<f64>, node: usize) -> f64 {
        let s = sliding_surface(self.params, self.model.channels(), x, &self.leader[node], &self.delta_hat);
        s.dot(&(&self.setup.q * &s))
    }

    fn input_weight(&self, u: &DVector<f64>) -> f64 {
        // u is constant over the period, so its quadrature is exact.
        u.dot(&(&self.setup.r * u)) * self.setup.period
    }

    /// Simulates segment `k` from `x`; returns the end state and the
    /// trapezoid integral of `‖s‖²_Q` over the segment.
    fn segment(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let h = self.setup.step();
        let sub = self.setup.substeps;
        let first = k * sub;
        let mut state = x.clone();
        let mut acc = 0.5 * self.surface_weight(&state, first);
        for j in 0..sub {
            state = self.step(&state, u, (first + j) as f64 * h)?;
            let w = self.surface_weight(&state, first + j + 1);
            acc += if j + 1 == sub { 0.5 * w } else { w };
        }
        Ok((state, acc * h))
    }

    pub(crate) fn evaluate(&self, profile: &ControlProfile) -> Result<CostCache> {
        self.check_profile(profile)?;
        let n = self.setup.samples;
        let mut cache = CostCache {
            boundary: Vec::with_capacity(n + 1),
            surface_cost: Vec::with_capacity(n),
            input_cost: Vec::with_capacity(n),
        };
        cache.boundary.push(self.x0.clone());
        for (k, u) in profile.iter().enumerate() {
            let (next, c) = self.segment(k, &cache.boundary[k], u)?;
            cache.boundary.push(next);
            cache.surface_cost.push(c);
            cache.input_cost.push(self.input_weight(u));
        }
        Ok(cache)
    }

    /// Cost of `profile`, which differs from the profile behind `cache` only
    /// in sample `k`.
    pub(crate) fn cost_changed_at(&self, cache: &CostCache, profile: &ControlProfile, k: usize) -> Result<f64> {
        let mut total: f64 = cache.surface_cost[..k].iter().sum();
        total += cache.input_cost.iter().sum::<f64>() - cache.input_cost[k] + self.input_weight(&profile[k]);
        let mut x = cache.boundary[k].clone();
        for (j, u) in profile.iter().enumerate().skip(k) {
            let (next, c) = self.segment(j, &x, u)?;
            x = next;
            total += c;
        }
        Ok(total)
    }

    /// Composite-trapezoid cost `∫ ‖s‖²_Q + ‖u‖²_R` over the horizon.
    pub fn cost(&self, profile: &ControlProfile) -> Result<f64> {
        Ok(self.evaluate(profile)?.total())
    }

    pub fn simulate(&self, profile: &ControlProfile) -> Result<Trajectory> {
        self.check_profile(profile)?;
        let h = self.setup.step();
        let sub = self.setup.substeps;
        let mut x = Vec::with_capacity(self.leader.len());
        x.push(self.x0.clone());
        for (k, u) in profile.iter().enumerate() {
            for j in 0..sub {
                let node = k * sub + j;
                let next = self.step(&x[node], u, node as f64 * h)?;
                x.push(next);
            }
        }
        Ok(Trajectory {
            times: (0..self.leader.len()).map(|i| i as f64 * h).collect(),
            x,
            xi: self.leader.clone(),
        })
    }

    /// The fallback law applied at each sample instant along its own
    /// predicted trajectory.
    pub fn fallback_profile(&self) -> Result<ControlProfile> {
        let sub = self.setup.substeps;
        let h = self.setup.step();
        let mut x = self.x0.clone();
        let mut profile = Vec::with_capacity(self.setup.samples);
        for k in 0..self.setup.samples {
            let node = k * sub;
            let terms = StabilityTerms::new(
                self.model,
                self.params,
                &x,
                &self.leader[node],
                &self.s_hat,
                &self.delta_hat,
            );
            let u = fallback_from_terms(self.model, self.params, &x, &terms)?;
            for j in 0..sub {
                x = self.step(&x, &u, (node + j) as f64 * h)?;
            }
            profile.push(u);
        }
        Ok(profile)
    }
}
