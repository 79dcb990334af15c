//! TOML scenario documents.
//!
//! A document has the sections `meta`, `graph`, `faults`, `leader`,
//! `followers`, `formation`, `observers`, `controller` and an optional
//! `diagnostics`. Unknown keys are rejected. Agents and fault sites are
//! numbered from 1. Matrices are written as lists of rows.
//!
//! ```toml
//! [meta]
//! name = "pair"
//! seed = 7
//! t_final = 2.0
//! h = 0.01
//!
//! [graph]
//! adjacency = [[0.0, 0.0], [1.0, 0.0]]
//! pinning = [1.0, 0.0]
//!
//! [faults]
//! hold_period = 0.2
//!
//! [[faults.links]]
//! edge = [2, 1]           # a_21: agent 2 listens to agent 1
//! amplitude = 0.5
//! waveform = { kind = "sine", frequency = 1.0, phase = 0.0 }
//! factor = "held"
//!
//! [leader]
//! s0 = [[0.0, 1.0], [-1.0, -1.0]]
//! xi0 = [1.0, 0.0]
//!
//! [[followers]]
//! model = "integrator"
//! order = 2
//! channels = 1
//! bound = [2.0]
//! x0 = [0.0, 0.0]
//!
//! [[followers]]
//! model = "integrator"
//! order = 2
//! channels = 1
//! bound = [2.0]
//! x0 = [0.5, 0.0]
//!
//! [formation]
//! displacements = [[0.0, 0.0], [0.3, 0.0]]
//!
//! [observers]
//! c_xi = 2.0
//!
//! [controller]
//! lambda = [1.0]
//! c = 2.0
//! k_s = 0.1
//! horizon = 0.4
//! period = 0.2
//! q = [[1.0]]
//! r = [[0.1]]
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{AgentSetup, Scenario, Theorem2Inputs};
use crate::error::{Error, Result};
use crate::graph::{FaultProfile, FaultSite, GraphSpec, LinkFault, PConstruction, RandomFactor, Waveform};
use crate::models::{BuiltinDynamics, FollowerDynamics, FollowerModel, FormationSpec, Integrator, LeaderModel, Quadrotor};
use crate::mpc::{k_s_autotune, AutotuneRegion, MpcSetup, PredictionStart, SlidingParams, SolverOptions};
use crate::observers::ObserverState;

const EXAMPLE1: &str = include_str!("../scenarios/example1.toml");
const EXAMPLE2: &str = include_str!("../scenarios/example2.toml");

/// Names of the bundled scenarios.
pub const BUNDLED: [&str; 2] = ["example1", "example2"];

/// Source text of a bundled scenario.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(EXAMPLE1),
        "example2" => Some(EXAMPLE2),
        _ => None,
    }
}

pub fn bundled(name: &str) -> Result<ScenarioDocument> {
    let text = bundled_source(name).ok_or_else(|| {
        Error::Config(format!("unknown bundled scenario '{name}' (expected one of {})", BUNDLED.join(", ")))
    })?;
    ScenarioDocument::parse(text)
}

/// One value for every agent, or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerAgent<T> {
    fn resolve(&self, agents: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerAgent::All(v) => Ok(vec![v.clone(); agents]),
            PerAgent::Each(v) if v.len() == agents => Ok(v.clone()),
            PerAgent::Each(v) => Err(Error::Dimension {
                context: what.into(),
                expected: agents,
                actual: v.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaDoc {
    pub name: String,
    pub seed: u64,
    pub t_final: f64,
    /// RK4 step; must divide the control period.
    pub h: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub snapshot_mode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_construction: Option<PConstruction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub adjacency: Vec<Vec<f64>>,
    pub pinning: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    /// `[to, from]`: the weight `a_{to,from}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<[usize; 2]>,
    /// Pinned agent whose leader link is faulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin: Option<usize>,
    pub amplitude: f64,
    pub waveform: Waveform,
    pub factor: RandomFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaultsDoc {
    /// Defaults to the control period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_period: Option<f64>,
    #[serde(default)]
    pub links: Vec<LinkDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderDoc {
    pub s0: Vec<Vec<f64>>,
    pub xi0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerDoc {
    /// `cubic`, `trigonometric`, `polynomial`, `quadrotor` or `integrator`.
    pub model: String,
    /// Integrator chain order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Integrator channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    /// Symmetric bound magnitudes; alternatively `u_lo` and `u_hi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hi: Option<Vec<f64>>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationDoc {
    pub displacements: Vec<Vec<f64>>,
}

/// Initial observer estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverInit {
    /// All estimates zero.
    #[default]
    Zero,
    /// Leader-state estimate at the agent's own initial state; matrix and
    /// displacement estimates zero.
    OwnState,
    /// Estimates equal to the true leader state, matrix and displacement.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserversDoc {
    pub c_xi: PerAgent<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub init: ObserverInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_delta0: Option<f64>,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// `k_s = <number>` or `k_s = "auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KsDoc {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutotuneDoc {
    /// State box sampled for the k_s estimate.
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    #[serde(default = "default_autotune_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_autotune_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDoc {
    pub lambda: Vec<f64>,
    pub c: f64,
    pub k_s: KsDoc,
    /// Per-channel saturation-degree bound; defaults to ones, or to the
    /// autotuned value with `k_s = "auto"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_lower: Option<Vec<f64>>,
    pub horizon: f64,
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// `tanh(s/ε)` in place of `sgn(s)` in the fallback law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub prediction_start: PredictionStartDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autotune: Option<AutotuneDoc>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub solver: SolverDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionStartDoc {
    #[default]
    Estimate,
    TrueLeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem2Doc {
    pub kappa1: f64,
    pub kappa2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsDoc {
    /// Bound on the leader-matrix estimation error, enabling κ₅.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_tilde_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem2: Option<Theorem2Doc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub meta: MetaDoc,
    pub graph: GraphDoc,
    #[serde(default, skip_serializing_if = "is_default")]
    pub faults: FaultsDoc,
    pub leader: LeaderDoc,
    pub followers: Vec<FollowerDoc>,
    pub formation: FormationDoc,
    pub observers: ObserversDoc,
    pub controller: ControllerDoc,
    #[serde(default, skip_serializing_if = "is_default")]
    pub diagnostics: DiagnosticsDoc,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            context: format!("{what} row length"),
            expected: ncols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn one_based(index: usize, count: usize, what: &str) -> Result<usize> {
    if index == 0 || index > count {
        return Err(Error::Config(format!("{what} index {index} out of range 1..={count}")));
    }
    Ok(index - 1)
}

impl FollowerDoc {
    fn dynamics(&self) -> Result<Arc<dyn FollowerDynamics>> {
        let unused = |field: &str, present: bool| {
            if present {
                Err(Error::Config(format!("follower model '{}' does not take '{field}'", self.model)))
            } else {
                Ok(())
            }
        };
        match self.model.as_str() {
            "integrator" => {
                unused("mass", self.mass.is_some())?;
                unused("gravity", self.gravity.is_some())?;
                let order = self.order.unwrap_or(1);
                let channels = self.channels.unwrap_or(1);
                if order == 0 || channels == 0 {
                    return Err(Error::Config("integrator order and channels must be positive".into()));
                }
                Ok(Arc::new(Integrator::new(order, channels)))
            }
            "quadrotor" => {
                unused("order", self.order.is_some())?;
                unused("channels", self.channels.is_some())?;
                let d = Quadrotor::default();
                let q = Quadrotor {
                    mass: self.mass.unwrap_or(d.mass),
                    gravity: self.gravity.unwrap_or(d.gravity),
                };
                if !(q.mass > 0.0 && q.gravity.is_finite()) {
                    return Err(Error::Config("quadrotor mass must be positive".into()));
                }
                Ok(Arc::new(q))
            }
            key => {
                let builtin = BuiltinDynamics::from_key(key).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown follower model '{key}' (expected cubic, trigonometric, polynomial, quadrotor or integrator)"
                    ))
                })?;
                for (field, present) in [
                    ("order", self.order.is_some()),
                    ("channels", self.channels.is_some()),
                    ("mass", self.mass.is_some()),
                    ("gravity", self.gravity.is_some()),
                ] {
                    unused(field, present)?;
                }
                Ok(Arc::new(builtin))
            }
        }
    }

    fn model(&self) -> Result<FollowerModel> {
        let dynamics = self.dynamics()?;
        let (lo, hi) = match (&self.bound, &self.u_lo, &self.u_hi) {
            (Some(b), None, None) => (b.clone(), b.clone()),
            (None, Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
            (None, None, None) if self.model == "quadrotor" => {
                let b: Vec<f64> = Quadrotor::default_bounds().iter().copied().collect();
                (b.clone(), b)
            }
            _ => {
                return Err(Error::Config(
                    "give either 'bound' or both 'u_lo' and 'u_hi' for every follower".into(),
                ))
            }
        };
        FollowerModel::new(dynamics, vector(&lo), vector(&hi))
    }
}

impl LinkDoc {
    fn site(&self, agents: usize) -> Result<FaultSite> {
        match (self.edge, self.pin) {
            (Some([to, from]), None) => Ok(FaultSite::Edge {
                to: one_based(to, agents, "fault edge")?,
                from: one_based(from, agents, "fault edge")?,
            }),
            (None, Some(agent)) => Ok(FaultSite::Pin {
                agent: one_based(agent, agents, "fault pin")?,
            }),
            _ => Err(Error::Config("each fault link needs exactly one of 'edge' or 'pin'".into())),
        }
    }
}

impl ScenarioDocument {
    /// Parses and schema-checks a document; errors carry the line and column.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn agent_count(&self) -> usize {
        self.followers.len()
    }

    /// The nominal graph alone, for structural checks ahead of a full build.
    pub fn graph_spec(&self) -> Result<GraphSpec> {
        GraphSpec::new(matrix(&self.graph.adjacency, "adjacency")?, vector(&self.graph.pinning))
    }

    /// Builds the graph, models and per-agent controllers. With
    /// `k_s = "auto"` the autotune region is sampled once per agent.
    pub fn build(&self) -> Result<Scenario> {
        let m = self.agent_count();
        let graph = self.graph_spec()?;
        if graph.agent_count() != m {
            return Err(Error::Dimension {
                context: "followers (graph size)".into(),
                expected: graph.agent_count(),
                actual: m,
            });
        }
        let c = &self.controller;
        let hold = self.faults.hold_period.unwrap_or(c.period);
        let links = self
            .faults
            .links
            .iter()
            .map(|l| {
                Ok(LinkFault {
                    site: l.site(m)?,
                    amplitude: l.amplitude,
                    waveform: l.waveform,
                    factor: l.factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let faults = FaultProfile::new(links, hold, self.meta.seed)?;

        let leader = LeaderModel::new(matrix(&self.leader.s0, "leader s0")?, vector(&self.leader.xi0))?;
        let formation = FormationSpec::new(self.formation.displacements.iter().map(|d| vector(d)).collect())?;
        if formation.agent_count() != m {
            return Err(Error::Dimension {
                context: "formation displacements".into(),
                expected: m,
                actual: formation.agent_count(),
            });
        }

        let substeps = (c.period / self.meta.h).round();
        if !(self.meta.h > 0.0 && substeps >= 1.0 && (substeps * self.meta.h - c.period).abs() <= 1e-9 * c.period) {
            return Err(Error::Config(format!(
                "integration step h = {} must divide the control period {}",
                self.meta.h, c.period
            )));
        }
        let substeps = substeps as usize;

        let c_xi = self.observers.c_xi.resolve(m, "observer gains c_xi")?;
        let mut setup = MpcSetup::new(c.horizon, c.period, substeps, matrix(&c.q, "Q")?, matrix(&c.r, "R")?)?;
        if let Some(n) = c.samples {
            setup.samples = n;
        }
        let d = SolverOptions::default();
        setup.solver = SolverOptions {
            max_iterations: c.solver.max_iterations.unwrap_or(d.max_iterations),
            tolerance: c.solver.tolerance.unwrap_or(d.tolerance),
            fd_scale: c.solver.fd_scale.unwrap_or(d.fd_scale),
            constraint_tolerance: c.solver.constraint_tolerance.unwrap_or(d.constraint_tolerance),
        };
        setup.prediction_start = match c.prediction_start {
            PredictionStartDoc::Estimate => PredictionStart::Estimate,
            PredictionStartDoc::TrueLeader => PredictionStart::TrueLeader,
        };
        setup.validate()?;

        let mut agents = Vec::with_capacity(m);
        for (i, f) in self.followers.iter().enumerate() {
            let model = f.model().map_err(|e| agent_error(i, e))?;
            let n = model.channels();
            let mut params = SlidingParams {
                lambda: c.lambda.clone(),
                c: c.c,
                k_s: 1.0,
                chi_lower: DVector::from_element(n, 1.0),
                smoothing: c.smoothing,
            };
            if let Some(chi) = &c.chi_lower {
                params.chi_lower = vector(chi);
            }
            params.check_dims(&model).map_err(|e| agent_error(i, e))?;
            params.k_s = match &c.k_s {
                KsDoc::Value(v) => *v,
                KsDoc::Keyword(k) if k == "auto" => {
                    let tune = c.autotune.as_ref().ok_or_else(|| {
                        Error::Config("k_s = \"auto\" needs a [controller.autotune] state region".into())
                    })?;
                    let region = AutotuneRegion {
                        x_lo: vector(&tune.x_lo),
                        x_hi: vector(&tune.x_hi),
                        xi_hat: leader.xi0().clone(),
                        s_hat: leader.s0().clone(),
                        delta_hat: formation.displacement(i).clone(),
                    };
                    let res = k_s_autotune(&model, &params, &region, tune.samples, tune.seed)
                        .map_err(|e| agent_error(i, e))?;
                    if c.chi_lower.is_none() {
                        params.chi_lower = res.chi_lower;
                    }
                    res.k_s
                }
                KsDoc::Keyword(other) => {
                    return Err(Error::Config(format!("k_s must be a number or \"auto\", got \"{other}\"")))
                }
            };
            params.validate().map_err(|e| agent_error(i, e))?;

            let dim = leader.dim();
            let mut observer0 = match self.observers.init {
                ObserverInit::Zero => ObserverState::zero(dim),
                ObserverInit::OwnState => ObserverState {
                    xi_hat: vector(&f.x0),
                    ..ObserverState::zero(dim)
                },
                ObserverInit::Exact => ObserverState {
                    xi_hat: leader.xi0().clone(),
                    s_hat: leader.s0().clone(),
                    delta_hat: formation.displacement(i).clone(),
                    c_s: 1.0,
                    c_delta: 1.0,
                },
            };
            if observer0.xi_hat.len() != dim {
                return Err(agent_error(
                    i,
                    Error::Dimension {
                        context: "initial state".into(),
                        expected: dim,
                        actual: observer0.xi_hat.len(),
                    },
                ));
            }
            observer0.c_s = self.observers.c_s0.unwrap_or(1.0);
            observer0.c_delta = self.observers.c_delta0.unwrap_or(1.0);

            agents.push(AgentSetup {
                model,
                x0: vector(&f.x0),
                observer0,
                c_xi: c_xi[i],
                params,
                mpc: setup.clone(),
            });
        }

        let scenario = Scenario {
            name: self.meta.name.clone(),
            graph,
            faults,
            leader,
            formation,
            agents,
            t_final: self.meta.t_final,
            substeps,
            snapshot_mode: self.meta.snapshot_mode,
            p_construction: self.meta.p_construction.unwrap_or_default(),
            s_tilde_bound: self.diagnostics.s_tilde_bound,
            theorem2: self.diagnostics.theorem2.as_ref().map(|t| Theorem2Inputs {
                kappa1: t.kappa1,
                kappa2: t.kappa2,
                rho_s: t.rho_s,
            }),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn agent_error(i: usize, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("follower {}: {msg}", i + 1)),
        Error::Dimension { context, expected, actual } => Error::Dimension {
            context: format!("follower {}: {context}", i + 1),
            expected,
            actual,
        },
        other => other,
    }
}
