//! Adaptive distributed observers of the leader state, the leader dynamics
//! matrix and the formation displacement.
//!
//! Each agent only sees its in-neighbours' estimates (and, if pinned, the
//! leader data) through a [`NeighborhoodSnapshot`] weighted by the current,
//! possibly faulty, link weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::vec;

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub xi_hat: DVector<f64>,
    pub s_hat: DMatrix<f64>,
    pub delta_hat: DVector<f64>,
    pub c_s: f64,
    pub c_delta: f64,
}

impl ObserverState {
    /// All estimates zero, adaptive gains at one.
    pub fn zero(dim: usize) -> Self {
        Self {
            xi_hat: DVector::zeros(dim),
            s_hat: DMatrix::zeros(dim, dim),
            delta_hat: DVector::zeros(dim),
            c_s: 1.0,
            c_delta: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xi_hat.len()
    }

    /// Length of the flattened state for a leader of dimension `dim`.
    pub fn flat_len(dim: usize) -> usize {
        2 * dim + dim * dim + 2
    }

    /// Appends `[xi_hat; vec(s_hat); delta_hat; c_s; c_delta]` to `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.xi_hat.as_slice());
        out.extend_from_slice(self.s_hat.as_slice());
        out.extend_from_slice(self.delta_hat.as_slice());
        out.push(self.c_s);
        out.push(self.c_delta);
    }

    pub fn unflatten(dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::flat_len(dim) {
            return Err(Error::Dimension {
                context: "flattened observer state".into(),
                expected: Self::flat_len(dim),
                actual: flat.len(),
            });
        }
        let (xi, rest) = flat.split_at(dim);
        let (s, rest) = rest.split_at(dim * dim);
        let (delta, gains) = rest.split_at(dim);
        Ok(Self {
            xi_hat: DVector::from_column_slice(xi),
            s_hat: DMatrix::from_column_slice(dim, dim, s),
            delta_hat: DVector::from_column_slice(delta),
            c_s: gains[0],
            c_delta: gains[1],
        })
    }
}

/// Data agent `i` receives from in-neighbour `j`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborData<'a> {
    pub xi_hat: &'a DVector<f64>,
    pub s_hat: &'a DMatrix<f64>,
    pub delta_hat: &'a DVector<f64>,
    /// `Δ_i − Δ_j`.
    pub delta_rel: &'a DVector<f64>,
    pub weight: f64,
}

/// Ground truth available to a pinned agent.
#[derive(Debug, Clone, Copy)]
pub struct LeaderData<'a> {
    pub xi0: &'a DVector<f64>,
    pub s0: &'a DMatrix<f64>,
    /// The agent's own displacement `Δ_i`.
    pub delta: &'a DVector<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct NeighborhoodSnapshot<'a> {
    pub neighbors: Vec<NeighborData<'a>>,
    pub leader: Option<LeaderData<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalErrors {
    pub xi: DVector<f64>,
    pub s: DMatrix<f64>,
    pub delta: DVector<f64>,
}

pub fn local_errors(state: &ObserverState, nbhd: &NeighborhoodSnapshot<'_>) -> LocalErrors {
    let d = state.dim();
    let mut xi = DVector::zeros(d);
    let mut s = DMatrix::zeros(d, d);
    let mut delta = DVector::zeros(d);
    for nb in &nbhd.neighbors {
        let w = nb.weight;
        xi.axpy(w, &(&state.xi_hat - nb.xi_hat), 1.0);
        s += (&state.s_hat - nb.s_hat) * w;
        delta.axpy(w, &(&state.delta_hat - nb.delta_hat - nb.delta_rel), 1.0);
    }
    if let Some(l) = &nbhd.leader {
        let w = l.weight;
        xi.axpy(w, &(&state.xi_hat - l.xi0), 1.0);
        s += (&state.s_hat - l.s0) * w;
        delta.axpy(w, &(&state.delta_hat - l.delta), 1.0);
    }
    LocalErrors { xi, s, delta }
}

/// Time derivative of the observer state. The adaptive-gain rates are
/// computed first and reused in the matrix and displacement updates.
pub fn observer_derivative(state: &ObserverState, errors: &LocalErrors, c_xi: f64) -> ObserverState {
    let c_s_dot = vec(&errors.s).norm_squared();
    let c_delta_dot = errors.delta.norm_squared();
    ObserverState {
        xi_hat: &state.s_hat * &state.xi_hat - &errors.xi * c_xi,
        s_hat: &errors.s * -(state.c_s + c_s_dot),
        delta_hat: &errors.delta * -(state.c_delta + c_delta_dot),
        c_s: c_s_dot,
        c_delta: c_delta_dot,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationErrors {
    pub xi: Vec<f64>,
    pub s: Vec<f64>,
    pub delta: Vec<f64>,
}

impl EstimationErrors {
    pub fn stacked_xi(&self) -> f64 {
        rss(&self.xi)
    }

    pub fn stacked_s(&self) -> f64 {
        rss(&self.s)
    }

    pub fn stacked_delta(&self) -> f64 {
        rss(&self.delta)
    }
}

fn rss(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-agent norms of `ξ̂_i − ξ₀`, `vec(Ŝ_i − S₀)` and `Δ̂_i − Δ_i`.
pub fn global_estimation_errors(
    observers: &[ObserverState],
    xi0: &DVector<f64>,
    s0: &DMatrix<f64>,
    displacements: &[DVector<f64>],
) -> EstimationErrors {
    let mut out = EstimationErrors {
        xi: Vec::with_capacity(observers.len()),
        s: Vec::with_capacity(observers.len()),
        delta: Vec::with_capacity(observers.len()),
    };
    for (obs, delta) in observers.iter().zip(displacements) {
        out.xi.push((&obs.xi_hat - xi0).norm());
        out.s.push((&obs.s_hat - s0).norm());
        out.delta.push((&obs.delta_hat - delta).norm());
    }
    out
}
