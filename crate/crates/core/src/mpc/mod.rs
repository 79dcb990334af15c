//! Per-agent Lyapunov-constrained MPC on a sliding surface.
//!
//! Each follower drives `s = Σ λ_l e_{l+1} + e_r` (with `e = x − ξ̂ − Δ̂`) to
//! zero. The optimal control problem minimises `∫ ‖s‖²_Q + ‖u‖²_R` over a
//! piecewise-constant profile, subject to the input box on every sample and
//! to `sᵀṡ ≤ −c‖s‖²` at the current instant. A saturated sliding-mode law is
//! always available as a feasible fallback.

mod autotune;
mod predict;
mod projection;
mod solver;

pub use autotune::{k_s_autotune, AutotuneRegion, AutotuneResult};
pub use predict::{Predictor, Trajectory};
pub use projection::{dykstra_box_halfspace, project_box, Halfspace, ProjectionOutcome};
pub use solver::{cost_gradient, fallback_profile, solve_ocp, Controller, LocalView, SolveReport};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{eig_real_parts, sym_min_eig};
use crate::models::FollowerModel;

/// Sliding-surface and fallback-law parameters of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingParams {
    /// `λ_0 … λ_{r−2}`.
    pub lambda: Vec<f64>,
    /// Decay gain of the stability constraint.
    pub c: f64,
    /// Robustness gain of the fallback law.
    pub k_s: f64,
    /// Lower bound on the saturation degree, one entry per output channel.
    pub chi_lower: DVector<f64>,
    /// Replace `sgn(s)` in the fallback by `tanh(s/ε)`.
    pub smoothing: Option<f64>,
}

impl SlidingParams {
    pub fn new(lambda: Vec<f64>, c: f64, k_s: f64, chi_lower: DVector<f64>) -> Result<Self> {
        let p = Self {
            lambda,
            c,
            k_s,
            chi_lower,
            smoothing: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_hurwitz(&self.lambda) {
            return Err(Error::Assumption {
                assumption: "Hurwitz sliding surface",
                detail: format!(
                    "z^{} + ... with coefficients {:?} has a root with nonnegative real part",
                    self.lambda.len(),
                    self.lambda
                ),
            });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("decay gain c must be positive, got {}", self.c)));
        }
        if !(self.k_s > 0.0 && self.k_s.is_finite()) {
            return Err(Error::Config(format!("k_s must be positive, got {}", self.k_s)));
        }
        if self.chi_lower.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Config("chi_lower entries must lie in (0, 1]".into()));
        }
        if let Some(eps) = self.smoothing {
            if !(eps > 0.0) {
                return Err(Error::Config("smoothing width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Checks lengths against a model of chain order `r` with `n` channels.
    pub fn check_dims(&self, model: &FollowerModel) -> Result<()> {
        if self.lambda.len() + 1 != model.order() {
            return Err(Error::Dimension {
                context: "sliding coefficients (chain order − 1)".into(),
                expected: model.order() - 1,
                actual: self.lambda.len(),
            });
        }
        if self.chi_lower.len() != model.channels() {
            return Err(Error::Dimension {
                context: "chi_lower".into(),
                expected: model.channels(),
                actual: self.chi_lower.len(),
            });
        }
        Ok(())
    }
}

/// Whether `z^k + λ_{k−1} z^{k−1} + … + λ_0` (with `k = lambda.len()`) has
/// all roots in the open left half plane. The empty polynomial is Hurwitz.
pub fn is_hurwitz(lambda: &[f64]) -> bool {
    let k = lambda.len();
    if k == 0 {
        return true;
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut companion = DMatrix::zeros(k, k);
    for i in 0..k - 1 {
        companion[(i, i + 1)] = 1.0;
    }
    for (j, l) in lambda.iter().enumerate() {
        companion[(k - 1, j)] = -l;
    }
    eig_real_parts(&companion).into_iter().all(|re| re < 0.0)
}

fn segment(v: &DVector<f64>, n: usize, l: usize) -> nalgebra::DVectorView<'_, f64> {
    v.rows(l * n, n)
}

/// `s = Σ_{l=0}^{r−2} λ_l (x − ξ̂ − Δ̂)_{l+1} + (x − ξ̂ − Δ̂)_r`.
pub fn sliding_surface(
    params: &SlidingParams,
    n: usize,
    x: &DVector<f64>,
    xi_hat: &DVector<f64>,
    delta_hat: &DVector<f64>,
) -> DVector<f64> {
    let r = params.lambda.len() + 1;
    let mut s = segment(x, n, r - 1) - segment(xi_hat, n, r - 1) - segment(delta_hat, n, r - 1);
    for (l, lam) in params.lambda.iter().enumerate() {
        s += (segment(x, n, l) - segment(xi_hat, n, l) - segment(delta_hat, n, l)) * *lam;
    }
    s
}

/// Clamps `v` into `[−u_lo, u_hi]` and returns the per-channel saturation
/// degree `χ ∈ (0, 1]`.
pub fn saturate(v: &DVector<f64>, u_lo: &DVector<f64>, u_hi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut u = v.clone();
    let mut chi = DVector::from_element(v.len(), 1.0);
    for j in 0..v.len() {
        if v[j] >= u_hi[j] {
            u[j] = u_hi[j];
            chi[j] = u_hi[j] / v[j];
        } else if v[j] <= -u_lo[j] {
            u[j] = -u_lo[j];
            chi[j] = u_lo[j] / -v[j];
        }
    }
    (u, chi)
}

/// The input-independent parts of the stability constraint at one instant.
///
/// `ṡ = A + actuation(x, u)` with
/// `A = Σ λ_l (x − ξ̂ − Δ̂)_{l+2} + f(x) − (Ŝ ξ̂)_r`. The displacement
/// segments follow the same `l+2` indexing as the state, since the derivative
/// of segment `l+1` of a stacked displacement is its segment `l+2` and the
/// top derivative of a displacement is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTerms {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub c: f64,
}

impl StabilityTerms {
    pub fn new(
        model: &FollowerModel,
        params: &SlidingParams,
        x: &DVector<f64>,
        xi_hat: &DVector<f64>,
        s_hat: &DMatrix<f64>,
        delta_hat: &DVector<f64>,
    ) -> Self {
        let n = model.channels();
        let r = model.order();
        let s = sliding_surface(params, n, x, xi_hat, delta_hat);
        let leader_rate = s_hat * xi_hat;
        let mut a = model.dynamics().drift(x) - segment(&leader_rate, n, r - 1);
        for (l, lam) in params.lambda.iter().enumerate() {
            a += (segment(x, n, l + 1) - segment(xi_hat, n, l + 1) - segment(delta_hat, n, l + 1)) * *lam;
        }
        Self { s, a, c: params.c }
    }

    /// `sᵀ(A + actuation(x, u))`.
    pub fn lhs(&self, model: &FollowerModel, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.s.dot(&(&self.a + model.dynamics().actuation(x, u)))
    }

    /// `−c‖s‖²`.
    pub fn bound(&self) -> f64 {
        -self.c * self.s.norm_squared()
    }

    /// Feasibility with an absolute tolerance.
    pub fn satisfied(&self, model: &FollowerModel, x: &DVector<f64>, u: &DVector<f64>, tol: f64) -> bool {
        self.lhs(model, x, u) <= self.bound() + tol
    }

    /// Nominal sliding-mode acceleration `−c s − A`.
    pub fn v_a(&self) -> DVector<f64> {
        -&self.s * self.c - &self.a
    }
}

/// Left-hand side of the stability constraint for input `u`; the constraint
/// is `lhs ≤ −c‖s‖²`.
pub fn stability_constraint_lhs(
    model: &FollowerModel,
    params: &SlidingParams,
    x: &DVector<f64>,
    xi_hat: &DVector<f64>,
    s_hat: &DMatrix<f64>,
    delta_hat: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    StabilityTerms::new(model, params, x, xi_hat, s_hat, delta_hat).lhs(model, x, u)
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Saturated sliding-mode law `sat(G⁻¹(v_a + v_d))` with
/// `v_d = −k_s χ̲⁻¹ sgn(s)`. Inside the box by construction.
pub fn fallback_control(
    model: &FollowerModel,
    params: &SlidingParams,
    x: &DVector<f64>,
    xi_hat: &DVector<f64>,
    s_hat: &DMatrix<f64>,
    delta_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let terms = StabilityTerms::new(model, params, x, xi_hat, s_hat, delta_hat);
    fallback_from_terms(model, params, x, &terms)
}

pub(crate) fn fallback_from_terms(
    model: &FollowerModel,
    params: &SlidingParams,
    x: &DVector<f64>,
    terms: &StabilityTerms,
) -> Result<DVector<f64>> {
    let sign = |v: f64| match params.smoothing {
        Some(eps) => (v / eps).tanh(),
        None => signum0(v),
    };
    let v_d = DVector::from_iterator(
        terms.s.len(),
        terms
            .s
            .iter()
            .zip(params.chi_lower.iter())
            .map(|(s, chi)| -params.k_s / chi * sign(*s)),
    );
    let w = terms.v_a() + v_d;
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::non_finite("fallback acceleration"));
    }
    let v = model.dynamics().invert_actuation(x, &w)?;
    Ok(saturate(&v, model.u_lo(), model.u_hi()).0)
}

/// Whether the leader prediction starts from the local estimate (the only
/// data available to an agent) or from the true leader state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionStart {
    #[default]
    Estimate,
    TrueLeader,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative step-size tolerance of the projected gradient iteration.
    pub tolerance: f64,
    /// Central-difference step scale: `fd_scale · (1 + |u_j|)`.
    pub fd_scale: f64,
    /// Feasibility tolerance of the stability constraint.
    pub constraint_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            tolerance: 1e-8,
            fd_scale: 1e-6,
            constraint_tolerance: 1e-10,
        }
    }
}

/// Horizon, sampling and weights of one agent's optimal control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSetup {
    pub horizon: f64,
    pub period: f64,
    pub samples: usize,
    /// RK4 substeps per control period, for prediction and quadrature.
    pub substeps: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub solver: SolverOptions,
    pub prediction_start: PredictionStart,
}

impl MpcSetup {
    /// Samples default to `round(T / δ)`.
    pub fn new(horizon: f64, period: f64, substeps: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let setup = Self {
            horizon,
            period,
            samples: (horizon / period).round().max(1.0) as usize,
            substeps,
            q,
            r,
            solver: SolverOptions::default(),
            prediction_start: PredictionStart::Estimate,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn step(&self) -> f64 {
        self.period / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period < self.horizon) {
            return Err(Error::Config(format!(
                "control period {} must be positive and shorter than the horizon {}",
                self.period, self.horizon
            )));
        }
        if self.samples == 0 || self.substeps == 0 {
            return Err(Error::Config("samples and substeps must be at least one".into()));
        }
        if !self.q.is_square() || !self.r.is_square() {
            return Err(Error::Config("weight matrices must be square".into()));
        }
        if sym_min_eig(&((&self.q + self.q.transpose()) * 0.5)) < -1e-12 {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::Config("R must be positive definite".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, model: &FollowerModel) -> Result<()> {
        if self.q.nrows() != model.channels() {
            return Err(Error::Dimension {
                context: "Q weight".into(),
                expected: model.channels(),
                actual: self.q.nrows(),
            });
        }
        if self.r.nrows() != model.input_dim() {
            return Err(Error::Dimension {
                context: "R weight".into(),
                expected: model.input_dim(),
                actual: self.r.nrows(),
            });
        }
        Ok(())
    }
}

/// Piecewise-constant input samples over the horizon.
pub type ControlProfile = Vec<DVector<f64>>;
