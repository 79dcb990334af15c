//! Projected-gradient solver of the per-agent optimal control problem and the
//! receding-horizon controller built on it.

use nalgebra::{DMatrix, DVector};

use super::predict::{CostCache, Predictor};
use super::projection::{dykstra_box_halfspace, project_box, Halfspace, ProjectionOutcome};
use super::{ControlProfile, MpcSetup, PredictionStart, SlidingParams, StabilityTerms};
use crate::error::Result;
use crate::models::FollowerModel;

const DYKSTRA_ITERATIONS: usize = 100;
const DYKSTRA_TOLERANCE: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
const RELINEARISATIONS: usize = 8;
/// Acceptance slack of the fallback-dominance comparison.
const DOMINANCE_SLACK: f64 = 1e-12;

/// What one agent knows at a control instant.
#[derive(Debug, Clone, Copy)]
pub struct LocalView<'a> {
    pub x: &'a DVector<f64>,
    pub xi_hat: &'a DVector<f64>,
    pub s_hat: &'a DMatrix<f64>,
    pub delta_hat: &'a DVector<f64>,
    /// True leader state; only read when predictions start from it.
    pub leader_truth: Option<&'a DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub profile: ControlProfile,
    pub cost: f64,
    pub fallback_cost: f64,
    pub fallback_feasible: bool,
    pub used_fallback: bool,
    pub iterations: usize,
    /// Stability-constraint left-hand side of the first sample.
    pub lhs: f64,
    /// `−c‖s‖²`.
    pub bound: f64,
    /// Whether the first sample satisfies the stability constraint.
    pub feasible: bool,
    pub s_norm: f64,
}

impl SolveReport {
    pub fn applied(&self) -> &DVector<f64> {
        &self.profile[0]
    }
}

/// Box ∩ {stability constraint} for the first sample.
struct FirstSampleSet<'a> {
    model: &'a FollowerModel,
    x: &'a DVector<f64>,
    terms: StabilityTerms,
    tolerance: f64,
}

impl FirstSampleSet<'_> {
    fn contains(&self, u: &DVector<f64>) -> bool {
        self.model.in_box(u) && self.terms.satisfied(self.model, self.x, u, self.tolerance)
    }

    fn margin(&self) -> f64 {
        1e-12 * (1.0 + self.terms.bound().abs())
    }

    /// Half-space of the constraint linearised at `u` (exact for affine
    /// models).
    fn linearised(&self, u: &DVector<f64>) -> Halfspace {
        let dyn_ = self.model.dynamics();
        let jac = dyn_.input_jacobian(self.x, u);
        let a = jac.transpose() * &self.terms.s;
        let offset = self.terms.lhs(self.model, self.x, u) - a.dot(u);
        Halfspace {
            b: self.terms.bound() - offset - self.margin(),
            a,
        }
    }

    fn project(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        let lo = self.model.u_lo();
        let hi = self.model.u_hi();
        let mut u = project_box(y, lo, hi);
        if self.contains(&u) {
            return Some(u);
        }
        let rounds = if self.model.dynamics().is_affine() { 1 } else { RELINEARISATIONS };
        for _ in 0..rounds {
            let hs = self.linearised(&u);
            match dykstra_box_halfspace(y, lo, hi, &hs, DYKSTRA_ITERATIONS, DYKSTRA_TOLERANCE) {
                ProjectionOutcome::Feasible { point, .. } => u = point,
                ProjectionOutcome::Infeasible { .. } => return None,
            }
            if self.contains(&u) {
                return Some(u);
            }
        }
        None
    }

    /// Box point with the least constraint value, for when the feasible set
    /// is empty.
    fn least_violation(&self, start: &DVector<f64>) -> DVector<f64> {
        let lo = self.model.u_lo();
        let hi = self.model.u_hi();
        let mut best = project_box(start, lo, hi);
        let mut best_lhs = self.terms.lhs(self.model, self.x, &best);
        let mut u = best.clone();
        let rounds = if self.model.dynamics().is_affine() { 1 } else { RELINEARISATIONS };
        for _ in 0..rounds {
            let hs = self.linearised(&u);
            u = DVector::from_iterator(
                u.len(),
                hs.a.iter().enumerate().map(|(j, a)| {
                    if *a > 0.0 {
                        -lo[j]
                    } else if *a < 0.0 {
                        hi[j]
                    } else {
                        u[j]
                    }
                }),
            );
            let lhs = self.terms.lhs(self.model, self.x, &u);
            if lhs < best_lhs {
                best_lhs = lhs;
                best = u.clone();
            }
        }
        best
    }
}

fn project_profile(set: &FirstSampleSet<'_>, profile: &ControlProfile) -> Option<ControlProfile> {
    let lo = set.model.u_lo();
    let hi = set.model.u_hi();
    let first = set.project(&profile[0])?;
    let mut out = Vec::with_capacity(profile.len());
    out.push(first);
    out.extend(profile[1..].iter().map(|u| project_box(u, lo, hi)));
    Some(out)
}

fn gradient(
    predictor: &Predictor<'_>,
    cache: &CostCache,
    profile: &ControlProfile,
    fd_scale: f64,
) -> Result<ControlProfile> {
    let mut grad = Vec::with_capacity(profile.len());
    let mut probe = profile.clone();
    for k in 0..profile.len() {
        let mut g = DVector::zeros(profile[k].len());
        for j in 0..profile[k].len() {
            let base = profile[k][j];
            let h = fd_scale * (1.0 + base.abs());
            probe[k][j] = base + h;
            let up = predictor.cost_changed_at(cache, &probe, k)?;
            probe[k][j] = base - h;
            let down = predictor.cost_changed_at(cache, &probe, k)?;
            probe[k][j] = base;
            g[j] = (up - down) / (2.0 * h);
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Central finite-difference gradient of the cost at `profile`.
pub fn cost_gradient(predictor: &Predictor<'_>, profile: &ControlProfile, fd_scale: f64) -> Result<ControlProfile> {
    let cache = predictor.evaluate(profile)?;
    gradient(predictor, &cache, profile, fd_scale)
}

fn dot(a: &ControlProfile, b: &ControlProfile) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn sub(a: &ControlProfile, b: &ControlProfile) -> ControlProfile {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(a: &ControlProfile, alpha: f64, g: &ControlProfile) -> ControlProfile {
    a.iter().zip(g).map(|(x, y)| x - y * alpha).collect()
}

fn start_point(setup: &MpcSetup, view: &LocalView<'_>) -> DVector<f64> {
    match (setup.prediction_start, view.leader_truth) {
        (PredictionStart::TrueLeader, Some(truth)) => truth.clone(),
        _ => view.xi_hat.clone(),
    }
}

/// Fallback law along its own predicted trajectory.
pub fn fallback_profile(
    model: &FollowerModel,
    params: &SlidingParams,
    setup: &MpcSetup,
    view: &LocalView<'_>,
) -> Result<ControlProfile> {
    Predictor::new(
        model,
        params,
        setup,
        view.x.clone(),
        start_point(setup, view),
        view.s_hat.clone(),
        view.delta_hat.clone(),
    )?
    .fallback_profile()
}

/// Solves the optimal control problem at one instant.
///
/// The returned profile is inside the box on every sample. Its first sample
/// satisfies the stability constraint whenever the constraint is feasible at
/// all (`feasible` reports the outcome), and its cost never exceeds that of
/// the fallback profile when the fallback is itself feasible.
pub fn solve_ocp(
    model: &FollowerModel,
    params: &SlidingParams,
    setup: &MpcSetup,
    view: &LocalView<'_>,
    warm_start: Option<&ControlProfile>,
) -> Result<SolveReport> {
    let predictor = Predictor::new(
        model,
        params,
        setup,
        view.x.clone(),
        start_point(setup, view),
        view.s_hat.clone(),
        view.delta_hat.clone(),
    )?;
    let terms = StabilityTerms::new(model, params, view.x, view.xi_hat, view.s_hat, view.delta_hat);
    let set = FirstSampleSet {
        model,
        x: view.x,
        terms,
        tolerance: setup.solver.constraint_tolerance,
    };

    let fallback = predictor.fallback_profile()?;
    let fallback_cache = predictor.evaluate(&fallback)?;
    let fallback_cost = fallback_cache.total();
    let fallback_feasible = set.contains(&fallback[0]);

    // Candidate starting points: the shifted warm start and the fallback.
    let mut best: Option<(ControlProfile, CostCache)> = None;
    if fallback_feasible {
        best = Some((fallback.clone(), fallback_cache.clone()));
    }
    if let Some(prev) = warm_start.filter(|p| p.len() == setup.samples && !p.is_empty()) {
        let mut shifted: ControlProfile = prev[1..].to_vec();
        shifted.push(fallback[setup.samples - 1].clone());
        if let Some(projected) = project_profile(&set, &shifted) {
            let cache = predictor.evaluate(&projected)?;
            if best.as_ref().is_none_or(|(_, c)| cache.total() < c.total()) {
                best = Some((projected, cache));
            }
        }
    }
    if best.is_none() {
        if let Some(projected) = project_profile(&set, &fallback) {
            let cache = predictor.evaluate(&projected)?;
            best = Some((projected, cache));
        }
    }

    let Some((mut u, start_cache)) = best else {
        // Empty feasible set: least-violation first sample, fallback tail.
        let mut profile = fallback.clone();
        profile[0] = set.least_violation(&fallback[0]);
        let cost = predictor.cost(&profile)?;
        return Ok(report(&set, profile, cost, fallback_cost, fallback_feasible, true, 0));
    };

    let opts = setup.solver;
    let mut cost = start_cache.total();
    let mut grad = gradient(&predictor, &start_cache, &u, opts.fd_scale)?;
    let gnorm = dot(&grad, &grad).sqrt();
    let mut alpha = if gnorm > 0.0 { 1.0 / gnorm.max(1.0) } else { 1.0 };
    let mut iterations = 0;

    for _ in 0..opts.max_iterations {
        if dot(&grad, &grad) == 0.0 {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if let Some(candidate) = project_profile(&set, &axpy(&u, alpha, &grad)) {
                let step = sub(&candidate, &u);
                let step2 = dot(&step, &step);
                if step2 == 0.0 {
                    break;
                }
                let cand_cache = predictor.evaluate(&candidate)?;
                if cand_cache.total() <= cost - ARMIJO / alpha * step2 {
                    accepted = Some((candidate, cand_cache, step));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((candidate, cand_cache, step)) = accepted else {
            break;
        };
        let step_norm = dot(&step, &step).sqrt();
        let scale = 1.0 + dot(&u, &u).sqrt();
        let new_grad = gradient(&predictor, &cand_cache, &candidate, opts.fd_scale)?;
        let y = sub(&new_grad, &grad);
        let sy = dot(&step, &y);
        alpha = if sy > 0.0 {
            (dot(&step, &step) / sy).clamp(1e-10, 1e6)
        } else {
            (alpha * 2.0).min(1e6)
        };
        u = candidate;
        cost = cand_cache.total();
        grad = new_grad;
        if step_norm <= opts.tolerance * scale {
            break;
        }
    }

    let solver_feasible = set.contains(&u[0]);
    if fallback_feasible && (!solver_feasible || cost > fallback_cost + DOMINANCE_SLACK) {
        return Ok(report(&set, fallback, fallback_cost, fallback_cost, true, true, iterations));
    }
    let used_fallback = u == fallback;
    Ok(report(&set, u, cost, fallback_cost, fallback_feasible, used_fallback, iterations))
}

fn report(
    set: &FirstSampleSet<'_>,
    profile: ControlProfile,
    cost: f64,
    fallback_cost: f64,
    fallback_feasible: bool,
    used_fallback: bool,
    iterations: usize,
) -> SolveReport {
    let lhs = set.terms.lhs(set.model, set.x, &profile[0]);
    SolveReport {
        feasible: set.contains(&profile[0]),
        lhs,
        bound: set.terms.bound(),
        s_norm: set.terms.s.norm(),
        profile,
        cost,
        fallback_cost,
        fallback_feasible,
        used_fallback,
        iterations,
    }
}

/// Receding-horizon controller of one agent: solves at each control instant,
/// applies the first sample, and keeps the profile for warm starting.
#[derive(Debug, Clone)]
pub struct Controller {
    pub model: FollowerModel,
    pub params: SlidingParams,
    pub setup: MpcSetup,
    previous: Option<ControlProfile>,
}

impl Controller {
    pub fn new(model: FollowerModel, params: SlidingParams, setup: MpcSetup) -> Self {
        Self {
            model,
            params,
            setup,
            previous: None,
        }
    }

    pub fn previous(&self) -> Option<&ControlProfile> {
        self.previous.as_ref()
    }

    pub fn set_previous(&mut self, profile: Option<ControlProfile>) {
        self.previous = profile;
    }

    pub fn step(&mut self, view: &LocalView<'_>) -> Result<SolveReport> {
        let report = solve_ocp(&self.model, &self.params, &self.setup, view, self.previous.as_ref())?;
        self.previous = Some(report.profile.clone());
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin_example1, Integrator};
    use std::sync::Arc;

    fn double_integrator() -> (FollowerModel, SlidingParams, MpcSetup) {
        let model =
            FollowerModel::symmetric(Arc::new(Integrator::new(2, 1)), DVector::from_element(1, 1.0)).unwrap();
        let params = SlidingParams::new(vec![1.0], 1.0, 0.1, DVector::from_element(1, 1.0)).unwrap();
        let setup = MpcSetup::new(0.4, 0.2, 10, DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.1)).unwrap();
        (model, params, setup)
    }

    #[test]
    fn on_target_static_leader_gives_zero() {
        let (model, params, setup) = double_integrator();
        let zero = DVector::zeros(2);
        let s_hat = DMatrix::zeros(2, 2);
        let view = LocalView {
            x: &zero,
            xi_hat: &zero,
            s_hat: &s_hat,
            delta_hat: &zero,
            leader_truth: None,
        };
        let rep = solve_ocp(&model, &params, &setup, &view, None).unwrap();
        assert!(rep.cost.abs() < 1e-12);
        assert!(rep.profile.iter().all(|u| u.norm() < 1e-6));
        assert!(rep.feasible);
    }

    #[test]
    fn example1_first_step_respects_box_and_constraint() {
        let ex = builtin_example1();
        let params = SlidingParams::new(vec![1.0, 2.0], 2.0, 0.1, DVector::from_element(1, 1.0)).unwrap();
        let setup = MpcSetup::new(0.8, 0.2, 20, DMatrix::from_element(1, 1, 10.0), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let xi = DVector::zeros(3);
        let s_hat = DMatrix::zeros(3, 3);
        let view = LocalView {
            x: &ex.initial_states[0],
            xi_hat: &xi,
            s_hat: &s_hat,
            delta_hat: &xi,
            leader_truth: None,
        };
        let rep = solve_ocp(&ex.followers[0], &params, &setup, &view, None).unwrap();
        assert!(rep.profile.iter().all(|u| u[0].abs() <= 3.0));
        assert!(rep.feasible);
        assert!(rep.lhs <= rep.bound + 1e-9);
        assert!(rep.cost <= rep.fallback_cost + 1e-12);
    }

    #[test]
    fn controller_is_deterministic_and_applies_first_sample() {
        let ex = builtin_example1();
        let params = SlidingParams::new(vec![1.0, 2.0], 2.0, 0.1, DVector::from_element(1, 1.0)).unwrap();
        let setup = MpcSetup::new(0.8, 0.2, 20, DMatrix::from_element(1, 1, 10.0), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let xi = ex.leader.xi0().clone();
        let s_hat = ex.leader.s0().clone();
        let delta = ex.formation.displacement(1).clone();
        let view = LocalView {
            x: &ex.initial_states[1],
            xi_hat: &xi,
            s_hat: &s_hat,
            delta_hat: &delta,
            leader_truth: None,
        };
        let mut a = Controller::new(ex.followers[1].clone(), params.clone(), setup.clone());
        let mut b = a.clone();
        let ra = a.step(&view).unwrap();
        let rb = b.step(&view).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.applied(), &a.previous().unwrap()[0]);
        let direct = solve_ocp(&ex.followers[1], &params, &setup, &view, None).unwrap();
        assert_eq!(ra.applied(), direct.applied());
    }

    #[test]
    fn infeasible_constraint_returns_least_violation() {
        // r = 1, f = 0, G = 1, box ±0.1: s = 1, v_a = −c s − A = −2 is out of reach
        let model =
            FollowerModel::symmetric(Arc::new(Integrator::new(1, 1)), DVector::from_element(1, 0.1)).unwrap();
        let params = SlidingParams::new(vec![], 2.0, 0.1, DVector::from_element(1, 1.0)).unwrap();
        let setup = MpcSetup::new(0.4, 0.2, 5, DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let x = DVector::from_element(1, 1.0);
        let zero = DVector::zeros(1);
        let s_hat = DMatrix::zeros(1, 1);
        let view = LocalView {
            x: &x,
            xi_hat: &zero,
            s_hat: &s_hat,
            delta_hat: &zero,
            leader_truth: None,
        };
        let rep = solve_ocp(&model, &params, &setup, &view, None).unwrap();
        assert!(!rep.feasible);
        assert_eq!(rep.applied()[0], -0.1);
    }
}
