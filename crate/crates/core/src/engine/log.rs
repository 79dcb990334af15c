use nalgebra::DVector;
use serde::Serialize;

use super::{Scenario, Theorem2Inputs};
use crate::graph::{validate_topology, GraphDiagnostics, PConstruction};
use crate::models::{FollowerModel, FormationSpec};
use crate::mpc::{is_hurwitz, SolveReport};
use crate::observers::{EstimationErrors, ObserverState};

/// Tolerance of the logged stability-constraint check.
pub const CONSTRAINT_SLACK: f64 = 1e-9;
/// Tolerance of the logged solver-versus-fallback cost comparison.
pub const DOMINANCE_SLACK: f64 = 1e-12;

/// Per-agent `‖x_i − ξ₀ − Δ_i‖` against the true leader, and their
/// root-sum-square.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormationError {
    pub per_agent: Vec<f64>,
    pub stacked: f64,
}

pub fn formation_error(x: &[DVector<f64>], leader: &DVector<f64>, formation: &FormationSpec) -> FormationError {
    let per_agent: Vec<f64> = x
        .iter()
        .zip(formation.displacements())
        .map(|(xi, d)| (xi - leader - d).norm())
        .collect();
    let stacked = per_agent.iter().map(|e| e * e).sum::<f64>().sqrt();
    FormationError { per_agent, stacked }
}

/// Full state and derived error norms at one substep time. `u` is the input
/// held from `t` to the next row (at the final row, the last input held).
#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub t: f64,
    pub x: Vec<DVector<f64>>,
    pub leader: DVector<f64>,
    pub observers: Vec<ObserverState>,
    pub u: Vec<DVector<f64>>,
    pub thetas: Vec<f64>,
    pub estimation: EstimationErrors,
    pub local_xi: Vec<f64>,
    pub local_s: Vec<f64>,
    pub local_delta: Vec<f64>,
    pub formation: FormationError,
    /// `‖x_i − ξ̂_i − Δ̂_i‖`, the error each agent can see.
    pub tracking: Vec<f64>,
    /// `½‖s_i‖²`.
    pub lyapunov: Vec<f64>,
}

impl StateRow {
    pub fn stacked_local_xi(&self) -> f64 {
        rss(&self.local_xi)
    }

    pub fn stacked_local_s(&self) -> f64 {
        rss(&self.local_s)
    }

    pub fn stacked_local_delta(&self) -> f64 {
        rss(&self.local_delta)
    }

    /// `Σ_i ½‖s_i‖²`.
    pub fn total_lyapunov(&self) -> f64 {
        self.lyapunov.iter().sum()
    }
}

fn rss(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solver outcome of one agent at one control instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub k: usize,
    pub t: f64,
    pub agent: usize,
    pub u: DVector<f64>,
    pub iterations: usize,
    pub cost: f64,
    pub fallback_cost: f64,
    pub fallback_feasible: bool,
    pub used_fallback: bool,
    pub lhs: f64,
    pub bound: f64,
    pub feasible: bool,
    pub s_norm: f64,
    pub in_box: bool,
}

impl TelemetryRow {
    pub fn new(k: usize, t: f64, agent: usize, model: &FollowerModel, report: &SolveReport) -> Self {
        Self {
            k,
            t,
            agent,
            u: report.applied().clone(),
            iterations: report.iterations,
            cost: report.cost,
            fallback_cost: report.fallback_cost,
            fallback_feasible: report.fallback_feasible,
            used_fallback: report.used_fallback,
            lhs: report.lhs,
            bound: report.bound,
            feasible: report.feasible,
            s_norm: report.s_norm,
            in_box: model.in_box(report.applied()),
        }
    }

    pub fn constraint_violated(&self) -> bool {
        !(self.lhs <= self.bound + CONSTRAINT_SLACK)
    }

    /// Solver cost above the fallback cost while the fallback was admissible.
    pub fn dominance_violated(&self) -> bool {
        self.fallback_feasible && !(self.cost <= self.fallback_cost + DOMINANCE_SLACK)
    }
}

/// Structural and graph diagnostics recorded before the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsHeader {
    pub scenario: String,
    pub seed: u64,
    pub agents: usize,
    pub t_final: f64,
    pub period: f64,
    pub step: f64,
    pub substeps: usize,
    pub snapshot_mode: bool,
    pub p_construction: PConstruction,
    pub topology_reachable: bool,
    pub hurwitz: Vec<bool>,
    pub k_s: Vec<f64>,
    pub chi_lower: Vec<Vec<f64>>,
    pub graph: GraphDiagnostics,
    pub theorem2_inputs: Option<Theorem2Inputs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub header: DiagnosticsHeader,
    /// One row per substep time, including `t = 0` and the final time.
    pub states: Vec<StateRow>,
    /// One row per agent per control instant.
    pub telemetry: Vec<TelemetryRow>,
    /// Fault site labels in declaration order, matching `StateRow::thetas`.
    pub fault_labels: Vec<String>,
    /// State dimension, output channels and input count of each agent.
    pub state_dims: Vec<usize>,
    pub channels: Vec<usize>,
    pub input_dims: Vec<usize>,
    pub displacements: Vec<DVector<f64>>,
    pub c: Vec<f64>,
}

impl SimLog {
    pub(crate) fn new(scenario: &Scenario, graph: GraphDiagnostics) -> Self {
        let header = DiagnosticsHeader {
            scenario: scenario.name.clone(),
            seed: scenario.seed(),
            agents: scenario.agent_count(),
            t_final: scenario.t_final,
            period: scenario.period(),
            step: scenario.step(),
            substeps: scenario.substeps,
            snapshot_mode: scenario.snapshot_mode,
            p_construction: scenario.p_construction,
            topology_reachable: validate_topology(&scenario.graph).all_reachable(),
            hurwitz: scenario.agents.iter().map(|a| is_hurwitz(&a.params.lambda)).collect(),
            k_s: scenario.agents.iter().map(|a| a.params.k_s).collect(),
            chi_lower: scenario
                .agents
                .iter()
                .map(|a| a.params.chi_lower.iter().copied().collect())
                .collect(),
            graph,
            theorem2_inputs: scenario.theorem2,
        };
        Self {
            header,
            states: Vec::new(),
            telemetry: Vec::new(),
            fault_labels: scenario.faults.faults().iter().map(|f| f.site.to_string()).collect(),
            state_dims: scenario.agents.iter().map(|a| a.model.state_dim()).collect(),
            channels: scenario.agents.iter().map(|a| a.model.channels()).collect(),
            input_dims: scenario.agents.iter().map(|a| a.model.input_dim()).collect(),
            displacements: scenario.formation.displacements().to_vec(),
            c: scenario.agents.iter().map(|a| a.params.c).collect(),
        }
    }

    pub fn agent_count(&self) -> usize {
        self.state_dims.len()
    }

    pub fn final_row(&self) -> Option<&StateRow> {
        self.states.last()
    }

    /// Largest total `V = Σ ½‖s_i‖²` over the final 20 % of the run.
    pub fn plateau(&self) -> f64 {
        let Some(last) = self.states.last() else {
            return 0.0;
        };
        let from = 0.8 * last.t;
        self.states
            .iter()
            .filter(|r| r.t >= from)
            .map(StateRow::total_lyapunov)
            .fold(0.0, f64::max)
    }

    pub fn constraint_violations(&self) -> usize {
        self.telemetry.iter().filter(|r| r.constraint_violated()).count()
    }

    pub fn box_violations(&self) -> usize {
        self.telemetry.iter().filter(|r| !r.in_box).count()
    }

    pub fn dominance_violations(&self) -> usize {
        self.telemetry.iter().filter(|r| r.dominance_violated()).count()
    }

    pub fn fallback_steps(&self) -> usize {
        self.telemetry.iter().filter(|r| r.used_fallback).count()
    }

    /// Largest `|u_j|` per agent and input over the whole log.
    pub fn max_abs_input(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.input_dims.iter().map(|m| vec![0.0; *m]).collect();
        for r in &self.telemetry {
            for (j, v) in r.u.iter().enumerate() {
                out[r.agent][j] = out[r.agent][j].max(v.abs());
            }
        }
        out
    }
}

/// Ultimate-bound check for the sampled sliding-surface energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub kappa1: f64,
    pub kappa2: f64,
    pub period: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// Smallest `ρ_s` for which `−2ρ_s λ_min(C) + (κ₁ + λ_max(C)κ₂)δ ≤ 0`.
    pub rho_floor: f64,
    /// The bound that was tested.
    pub rho_s: f64,
    pub holds: bool,
    /// Largest `V` over the final 20 % of the log.
    pub plateau: f64,
}

/// Evaluates `−2ρ_s λ_min(C) + (κ₁ + λ_max(C)κ₂)δ ≤ 0` with `C = diag(c_i)`.
/// Without an explicit `ρ_s`, the logged plateau is tested.
pub fn theorem2_report(log: &SimLog, inputs: &Theorem2Inputs) -> Theorem2Report {
    let c_min = log.c.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = log.c.iter().copied().fold(0.0, f64::max);
    let period = log.header.period;
    let plateau = log.plateau();
    let rho_floor = (inputs.kappa1 + c_max * inputs.kappa2) * period / (2.0 * c_min);
    let rho_s = inputs.rho_s.unwrap_or(plateau);
    Theorem2Report {
        kappa1: inputs.kappa1,
        kappa2: inputs.kappa2,
        period,
        c_min,
        c_max,
        rho_floor,
        rho_s,
        holds: -2.0 * rho_s * c_min + (inputs.kappa1 + c_max * inputs.kappa2) * period <= 0.0,
        plateau,
    }
}
