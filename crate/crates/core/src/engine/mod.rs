//! Closed-loop simulation: followers, leader and observers integrated as one
//! stacked ODE with RK4, and each agent's MPC re-solved at every control
//! instant with its input held in between.

mod log;
mod output;

pub use log::{
    formation_error, theorem2_report, FormationError, SimLog, StateRow, TelemetryRow,
    Theorem2Report,
};
pub use log::{DiagnosticsHeader, CONSTRAINT_SLACK, DOMINANCE_SLACK};
pub use output::{
    diagnostics_csv, states_csv, telemetry_csv, write_outputs, write_plot_series, OutputFiles, RunInfo, Summary,
};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{
    effective_weights_held, gain_condition_report, validate_topology, DiagnosticOptions,
    FaultProfile, GraphDiagnostics, GraphSpec, PConstruction,
};
use crate::models::{follower_derivative, leader_derivative, rk4_step, FollowerModel, FormationSpec, LeaderModel};
use crate::mpc::{sliding_surface, Controller, LocalView, MpcSetup, SlidingParams};
use crate::observers::{
    global_estimation_errors, local_errors, observer_derivative, LeaderData, LocalErrors,
    NeighborData, NeighborhoodSnapshot, ObserverState,
};

/// Everything one follower needs: plant, initial conditions, observer gain
/// and controller.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub model: FollowerModel,
    pub x0: DVector<f64>,
    pub observer0: ObserverState,
    pub c_xi: f64,
    pub params: SlidingParams,
    pub mpc: MpcSetup,
}

/// User-supplied constants of the ultimate-bound check on `V = ½‖s‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Inputs {
    pub kappa1: f64,
    pub kappa2: f64,
    /// Target bound; the logged plateau is used when absent.
    pub rho_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph: GraphSpec,
    pub faults: FaultProfile,
    pub leader: LeaderModel,
    pub formation: FormationSpec,
    pub agents: Vec<AgentSetup>,
    pub t_final: f64,
    /// RK4 steps per control period, shared by the plant and the predictions.
    pub substeps: usize,
    /// Hold neighbour and leader data fixed over each RK4 step instead of
    /// coupling them at every stage.
    pub snapshot_mode: bool,
    pub p_construction: PConstruction,
    /// Bound on `‖Ŝ_i − S₀‖` for the κ₅ diagnostic.
    pub s_tilde_bound: Option<f64>,
    pub theorem2: Option<Theorem2Inputs>,
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn seed(&self) -> u64 {
        self.faults.seed()
    }

    /// Common control period of all agents.
    pub fn period(&self) -> f64 {
        self.agents.first().map_or(0.0, |a| a.mpc.period)
    }

    pub fn step(&self) -> f64 {
        self.period() / self.substeps as f64
    }

    /// Sets the substep count of the plant and of every agent's predictions.
    pub fn set_substeps(&mut self, substeps: usize) {
        self.substeps = substeps;
        for a in &mut self.agents {
            a.mpc.substeps = substeps;
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.faults = self.faults.clone().with_seed(seed);
    }

    /// Structural checks: topology, fault signs, Hurwitz surfaces and all
    /// dimensions.
    pub fn validate(&self) -> Result<()> {
        let m = self.graph.agent_count();
        if self.agents.len() != m || self.formation.agent_count() != m {
            return Err(Error::Dimension {
                context: "agents (graph, agent list, formation)".into(),
                expected: m,
                actual: if self.agents.len() != m {
                    self.agents.len()
                } else {
                    self.formation.agent_count()
                },
            });
        }
        let report = validate_topology(&self.graph);
        if !report.all_reachable() {
            let names: Vec<String> = report.unreachable.iter().map(|i| (i + 1).to_string()).collect();
            return Err(Error::Assumption {
                assumption: "leader reachability",
                detail: format!("leader unreachable from agent(s) {}", names.join(", ")),
            });
        }
        self.faults.validate_against(&self.graph)?;
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be finite and nonnegative, got {}", self.t_final)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least one".into()));
        }
        let dim = self.leader.dim();
        let period = self.period();
        for (i, a) in self.agents.iter().enumerate() {
            let ctx = |e: Error| match e {
                Error::Dimension { context, expected, actual } => Error::Dimension {
                    context: format!("agent {}: {context}", i + 1),
                    expected,
                    actual,
                },
                Error::Config(msg) => Error::Config(format!("agent {}: {msg}", i + 1)),
                other => other,
            };
            a.params.validate().map_err(ctx)?;
            a.params.check_dims(&a.model).map_err(ctx)?;
            a.mpc.validate().map_err(ctx)?;
            a.mpc.check_dims(&a.model).map_err(ctx)?;
            for (what, len) in [
                ("leader state", dim),
                ("initial state", a.x0.len()),
                ("displacement", self.formation.displacement(i).len()),
                ("observer state", a.observer0.dim()),
            ] {
                if len != a.model.state_dim() {
                    return Err(ctx(Error::Dimension {
                        context: what.into(),
                        expected: a.model.state_dim(),
                        actual: len,
                    }));
                }
            }
            if !(a.c_xi > 0.0) {
                return Err(ctx(Error::Config("observer gain c_xi must be positive".into())));
            }
            if a.observer0.c_s < 1.0 || a.observer0.c_delta < 1.0 {
                return Err(ctx(Error::Config("initial adaptive gains must be at least 1".into())));
            }
            if a.mpc.period != period {
                return Err(Error::Config(format!(
                    "agent {} control period {} differs from {}; all agents share one control clock",
                    i + 1,
                    a.mpc.period,
                    period
                )));
            }
            if a.mpc.substeps != self.substeps {
                return Err(ctx(Error::Config(format!(
                    "prediction substeps {} differ from the plant's {}",
                    a.mpc.substeps, self.substeps
                ))));
            }
        }
        Ok(())
    }

    /// Graph diagnostics sampled at the middle of every fault hold period of
    /// the run (at least one sample).
    pub fn graph_diagnostics(&self) -> Result<GraphDiagnostics> {
        let hold = self.faults.hold_period();
        let periods = ((self.t_final / hold).ceil() as usize).max(1);
        let times: Vec<f64> = (0..periods).map(|k| (k as f64 + 0.5) * hold).collect();
        let c_xi: Vec<f64> = self.agents.iter().map(|a| a.c_xi).collect();
        gain_condition_report(
            &self.graph,
            &self.faults,
            self.leader.s0(),
            &c_xi,
            &times,
            DiagnosticOptions {
                construction: self.p_construction,
                s_tilde_bound: self.s_tilde_bound,
                fd_step: None,
            },
        )
    }
}

/// Offsets of the blocks of the stacked state
/// `[x_1 … x_M, ξ₀, observer_1 … observer_M]`.
struct Layout {
    x: Vec<(usize, usize)>,
    leader: usize,
    observers: Vec<usize>,
    dim: usize,
    len: usize,
}

impl Layout {
    fn new(scenario: &Scenario) -> Self {
        let dim = scenario.leader.dim();
        let mut offset = 0;
        let mut x = Vec::new();
        for a in &scenario.agents {
            let d = a.model.state_dim();
            x.push((offset, d));
            offset += d;
        }
        let leader = offset;
        offset += dim;
        let obs_len = ObserverState::flat_len(dim);
        let mut observers = Vec::new();
        for _ in &scenario.agents {
            observers.push(offset);
            offset += obs_len;
        }
        Self {
            x,
            leader,
            observers,
            dim,
            len: offset,
        }
    }

    fn pack(&self, x: &[DVector<f64>], leader: &DVector<f64>, observers: &[ObserverState]) -> DVector<f64> {
        let mut flat = Vec::with_capacity(self.len);
        for xi in x {
            flat.extend_from_slice(xi.as_slice());
        }
        flat.extend_from_slice(leader.as_slice());
        for o in observers {
            o.flatten_into(&mut flat);
        }
        DVector::from_vec(flat)
    }

    fn follower(&self, y: &DVector<f64>, i: usize) -> DVector<f64> {
        let (o, d) = self.x[i];
        y.rows(o, d).into_owned()
    }

    fn leader(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.leader, self.dim).into_owned()
    }

    fn observers(&self, y: &DVector<f64>) -> Result<Vec<ObserverState>> {
        let len = ObserverState::flat_len(self.dim);
        self.observers
            .iter()
            .map(|&o| ObserverState::unflatten(self.dim, &y.as_slice()[o..o + len]))
            .collect()
    }
}

/// Immutable per-run data shared by all derivative evaluations.
struct Plant<'a> {
    scenario: &'a Scenario,
    layout: Layout,
    /// `(j, Δ_i − Δ_j)` for every in-neighbour `j` of agent `i`.
    neighbors: Vec<Vec<(usize, DVector<f64>)>>,
}

impl<'a> Plant<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let neighbors = (0..scenario.agent_count())
            .map(|i| {
                scenario
                    .graph
                    .in_neighbors(i)
                    .map(|j| (j, scenario.formation.relative(i, j)))
                    .collect()
            })
            .collect();
        Self {
            scenario,
            layout: Layout::new(scenario),
            neighbors,
        }
    }

    /// Local estimation errors of every agent. `own` supplies each agent's
    /// own estimates, `shared` the estimates and leader state it receives.
    fn local_errors(
        &self,
        weights: &(DMatrix<f64>, DVector<f64>),
        own: &[ObserverState],
        shared: &[ObserverState],
        leader: &DVector<f64>,
    ) -> Vec<LocalErrors> {
        let sc = self.scenario;
        let (a, b) = weights;
        (0..sc.agent_count())
            .map(|i| {
                let neighbors = self.neighbors[i]
                    .iter()
                    .map(|(j, rel)| NeighborData {
                        xi_hat: &shared[*j].xi_hat,
                        s_hat: &shared[*j].s_hat,
                        delta_hat: &shared[*j].delta_hat,
                        delta_rel: rel,
                        weight: a[(i, *j)],
                    })
                    .collect();
                let leader = sc.graph.is_pinned(i).then(|| LeaderData {
                    xi0: leader,
                    s0: sc.leader.s0(),
                    delta: sc.formation.displacement(i),
                    weight: b[i],
                });
                local_errors(&own[i], &NeighborhoodSnapshot { neighbors, leader })
            })
            .collect()
    }

    fn derivative(
        &self,
        t: f64,
        y: &DVector<f64>,
        hold: u64,
        u: &[DVector<f64>],
        frozen: Option<&(Vec<ObserverState>, DVector<f64>)>,
    ) -> Result<DVector<f64>> {
        let sc = self.scenario;
        let lay = &self.layout;
        let weights = effective_weights_held(&sc.graph, &sc.faults, t, hold);
        let leader = lay.leader(y);
        let observers = lay.observers(y)?;
        let errors = match frozen {
            Some((shared, frozen_leader)) => self.local_errors(&weights, &observers, shared, frozen_leader),
            None => self.local_errors(&weights, &observers, &observers, &leader),
        };

        let mut dy = DVector::zeros(lay.len);
        for (i, a) in sc.agents.iter().enumerate() {
            let (o, d) = lay.x[i];
            let x = lay.follower(y, i);
            let dx = follower_derivative(&a.model, &x, &u[i]).map_err(|e| e.with_context(Some(i), t))?;
            dy.rows_mut(o, d).copy_from(&dx);
        }
        dy.rows_mut(lay.leader, lay.dim)
            .copy_from(&leader_derivative(&sc.leader, &leader));
        let mut flat = Vec::with_capacity(ObserverState::flat_len(lay.dim));
        for (i, a) in sc.agents.iter().enumerate() {
            flat.clear();
            observer_derivative(&observers[i], &errors[i], a.c_xi).flatten_into(&mut flat);
            let o = lay.observers[i];
            dy.as_mut_slice()[o..o + flat.len()].copy_from_slice(&flat);
        }
        Ok(dy)
    }

    fn row(&self, t: f64, y: &DVector<f64>, u: &[DVector<f64>]) -> Result<StateRow> {
        let sc = self.scenario;
        let lay = &self.layout;
        let x: Vec<DVector<f64>> = (0..sc.agent_count()).map(|i| lay.follower(y, i)).collect();
        let leader = lay.leader(y);
        let observers = lay.observers(y)?;
        let weights = effective_weights_held(&sc.graph, &sc.faults, t, sc.faults.hold_index(t));
        let errors = self.local_errors(&weights, &observers, &observers, &leader);
        let estimation = global_estimation_errors(&observers, &leader, sc.leader.s0(), sc.formation.displacements());
        let mut local_xi = Vec::new();
        let mut local_s = Vec::new();
        let mut local_delta = Vec::new();
        for e in &errors {
            local_xi.push(e.xi.norm());
            local_s.push(e.s.norm());
            local_delta.push(e.delta.norm());
        }
        let mut tracking = Vec::new();
        let mut lyapunov = Vec::new();
        for (i, a) in sc.agents.iter().enumerate() {
            let o = &observers[i];
            tracking.push((&x[i] - &o.xi_hat - &o.delta_hat).norm());
            let s = sliding_surface(&a.params, a.model.channels(), &x[i], &o.xi_hat, &o.delta_hat);
            lyapunov.push(0.5 * s.norm_squared());
        }
        let formation = formation_error(&x, &leader, &sc.formation);
        Ok(StateRow {
            t,
            thetas: sc.faults.thetas(t),
            x,
            leader,
            observers,
            u: u.to_vec(),
            estimation,
            local_xi,
            local_s,
            local_delta,
            formation,
            tracking,
            lyapunov,
        })
    }
}

/// Runs the closed loop from `t = 0` to `t_final`.
///
/// Controls are recomputed at `t_k = kδ` from the state at exactly `t_k` and
/// held until `t_{k+1}`. Every RK4 step uses the fault factors of the hold
/// period containing its start time.
pub fn run(scenario: &Scenario) -> Result<SimLog> {
    match run_partial(scenario)? {
        (log, None) => Ok(log),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`run`], but an error raised during the simulation is returned next
/// to the log recorded up to that point. Validation errors are returned
/// directly.
pub fn run_partial(scenario: &Scenario) -> Result<(SimLog, Option<Error>)> {
    scenario.validate()?;
    let mut log = SimLog::new(scenario, scenario.graph_diagnostics()?);
    let outcome = simulate(scenario, &mut log);
    Ok((log, outcome.err()))
}

fn simulate(scenario: &Scenario, log: &mut SimLog) -> Result<()> {
    let plant = Plant::new(scenario);
    let lay = &plant.layout;
    let m = scenario.agent_count();
    let h = scenario.step();
    let total_steps = (scenario.t_final / h - 1e-9).ceil().max(0.0) as usize;

    let x0: Vec<DVector<f64>> = scenario.agents.iter().map(|a| a.x0.clone()).collect();
    let obs0: Vec<ObserverState> = scenario.agents.iter().map(|a| a.observer0.clone()).collect();
    let mut y = lay.pack(&x0, scenario.leader.xi0(), &obs0);
    let mut controllers: Vec<Controller> = scenario
        .agents
        .iter()
        .map(|a| Controller::new(a.model.clone(), a.params.clone(), a.mpc.clone()))
        .collect();
    let mut u: Vec<DVector<f64>> = scenario.agents.iter().map(|a| DVector::zeros(a.model.input_dim())).collect();

    for step in 0..total_steps {
        let t = step as f64 * h;
        if step % scenario.substeps == 0 {
            let k = step / scenario.substeps;
            let leader = lay.leader(&y);
            let observers = lay.observers(&y)?;
            for i in 0..m {
                let x = lay.follower(&y, i);
                let o = &observers[i];
                let view = LocalView {
                    x: &x,
                    xi_hat: &o.xi_hat,
                    s_hat: &o.s_hat,
                    delta_hat: &o.delta_hat,
                    leader_truth: Some(&leader),
                };
                let report = controllers[i].step(&view).map_err(|e| e.with_context(Some(i), t))?;
                u[i] = report.applied().clone();
                log.telemetry.push(TelemetryRow::new(k, t, i, &controllers[i].model, &report));
            }
        }
        log.states.push(plant.row(t, &y, &u)?);

        let hold = scenario.faults.hold_index(t);
        let frozen = scenario.snapshot_mode.then(|| -> Result<_> { Ok((lay.observers(&y)?, lay.leader(&y))) });
        let frozen = frozen.transpose()?;
        y = rk4_step(|ts, ys| plant.derivative(ts, ys, hold, &u, frozen.as_ref()), t, &y, h)?;
    }
    log.states.push(plant.row(total_steps as f64 * h, &y, &u)?);
    Ok(())
}
