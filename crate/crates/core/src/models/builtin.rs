//! The two reference formations: three third-order nonlinear followers, and
//! five quadrotors in outer-loop translation control.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BuiltinDynamics, FollowerModel, FormationSpec, LeaderModel, Quadrotor};
use crate::graph::{FaultProfile, FaultSite, GraphSpec, LinkFault, RandomFactor, Waveform};

/// Default seed of the random fault factors.
pub const DEFAULT_SEED: u64 = 1;

/// Default hold period of the random fault factors, equal to the control period.
pub const DEFAULT_HOLD: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct ExampleSystem {
    pub followers: Vec<FollowerModel>,
    pub initial_states: Vec<DVector<f64>>,
    pub leader: LeaderModel,
    pub formation: FormationSpec,
    pub graph: GraphSpec,
    pub faults: FaultProfile,
}

fn sine_fault(site: FaultSite, amplitude: f64) -> LinkFault {
    LinkFault {
        site,
        amplitude,
        waveform: Waveform::Sine {
            frequency: 1.0,
            phase: 0.0,
        },
        factor: RandomFactor::Held,
    }
}

fn vector(values: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(values)
}

/// Three scalar third-order followers tracking a damped third-order leader.
///
/// The third follower is a plain chain (`x1' = x2`, `x2' = x3`) like the
/// others; its drift couples only its own states. A fourth displacement is
/// sometimes listed for this setup but there are only three followers, so it
/// has no counterpart here.
pub fn builtin_example1() -> ExampleSystem {
    let bound = DVector::from_element(1, 3.0);
    let followers = [
        BuiltinDynamics::Cubic,
        BuiltinDynamics::Trigonometric,
        BuiltinDynamics::Polynomial,
    ]
    .into_iter()
    .map(|d| FollowerModel::symmetric(Arc::new(d), bound.clone()).expect("valid bounds"))
    .collect();

    let s0 = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., -1., -1.16, -2.]);
    let leader = LeaderModel::new(s0, vector(&[1., 0., 0.])).expect("consistent leader");

    let formation = FormationSpec::new(vec![
        vector(&[0., 0., 0.]),
        vector(&[0.2, 0., 0.]),
        vector(&[-0.2, 0., 0.]),
    ])
    .expect("consistent formation");

    let adjacency = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 1., 0., 0.]);
    let graph = GraphSpec::new(adjacency, vector(&[1., 0., 0.])).expect("valid graph");
    let faults = FaultProfile::new(
        vec![
            sine_fault(FaultSite::Edge { to: 1, from: 0 }, 0.5),
            sine_fault(FaultSite::Pin { agent: 0 }, 0.3),
        ],
        DEFAULT_HOLD,
        DEFAULT_SEED,
    )
    .expect("valid faults");

    ExampleSystem {
        followers,
        initial_states: vec![
            vector(&[1.3, 0., 0.]),
            vector(&[0.5, 0., 0.]),
            vector(&[0., 0., 0.]),
        ],
        leader,
        formation,
        graph,
        faults,
    }
}

/// Five quadrotors in a V-shaped formation behind a slowly decaying leader.
pub fn builtin_example2() -> ExampleSystem {
    let followers = (0..5).map(|_| Quadrotor::default().model()).collect();

    #[rustfmt::skip]
    let s0 = DMatrix::from_row_slice(6, 6, &[
        0.0,     0.0,     0.0,     1.0,     0.0,     0.0,
        0.0,     0.0,     0.0,     0.0,     1.0,     0.0,
        0.0,     0.0,     0.0,     0.0,     0.0,     1.0,
        -0.0676, 0.0,     0.0,     -0.1040, 0.0,     0.0,
        0.0,     -0.0676, 0.0,     0.0,     -0.1040, 0.0,
        0.0,     0.0,     -0.0025, 0.0,     0.0,     -0.02,
    ]);
    let leader =
        LeaderModel::new(s0, vector(&[10., 0., 0., 0., 3., 1.2])).expect("consistent leader");

    let formation = FormationSpec::new(vec![
        vector(&[0., 1.1, 0., 0., 0., 0.]),
        vector(&[-1.5, 0., 0., 0., 0., 0.]),
        vector(&[1.5, 0., 0., 0., 0., 0.]),
        vector(&[-0.95, -1.8, 0., 0., 0., 0.]),
        vector(&[0.95, -1.8, 0., 0., 0., 0.]),
    ])
    .expect("consistent formation");

    #[rustfmt::skip]
    let adjacency = DMatrix::from_row_slice(5, 5, &[
        0., 0., 0., 0., 0.,
        1., 0., 0., 0., 0.,
        1., 0., 0., 0., 0.,
        0., 1., 1., 0., 0.,
        0., 0., 1., 1., 0.,
    ]);
    let graph = GraphSpec::new(adjacency, vector(&[1., 0., 0., 0., 0.])).expect("valid graph");
    let faults = FaultProfile::new(
        vec![
            sine_fault(FaultSite::Edge { to: 1, from: 0 }, 0.5),
            sine_fault(FaultSite::Edge { to: 3, from: 2 }, 0.5),
            sine_fault(FaultSite::Pin { agent: 0 }, 0.3),
        ],
        DEFAULT_HOLD,
        DEFAULT_SEED,
    )
    .expect("valid faults");

    let initial_states = [10.0, 7.0, 13.0, 8.5, 11.5]
        .iter()
        .map(|&px| vector(&[px, 0., 0., 0., 0., 0.]))
        .collect();

    ExampleSystem {
        followers,
        initial_states,
        leader,
        formation,
        graph,
        faults,
    }
}
