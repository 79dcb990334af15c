//! Directed, weighted follower topology pinned to a virtual leader.
//!
//! Rows index the receiving agent: `adjacency[(i, j)] > 0` means agent `i`
//! listens to agent `j`. The pinning vector holds the leader-to-follower gains.

mod diagnostics;
mod faults;

pub use diagnostics::{gain_condition_report, DiagnosticOptions, GraphDiagnostics};
pub use faults::{
    effective_weights, effective_weights_held, FaultProfile, FaultSite, LinkFault, RandomFactor,
    Waveform,
};

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Nominal communication weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    adjacency: DMatrix<f64>,
    pinning: DVector<f64>,
}

impl GraphSpec {
    pub fn new(adjacency: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self> {
        let m = adjacency.nrows();
        if m == 0 {
            return Err(Error::Config("graph must contain at least one agent".into()));
        }
        if adjacency.ncols() != m {
            return Err(Error::Dimension {
                context: "adjacency columns".into(),
                expected: m,
                actual: adjacency.ncols(),
            });
        }
        if pinning.len() != m {
            return Err(Error::Dimension {
                context: "pinning vector".into(),
                expected: m,
                actual: pinning.len(),
            });
        }
        for i in 0..m {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Config(format!(
                    "self-loop on agent {} (adjacency diagonal must be zero)",
                    i + 1
                )));
            }
        }
        if adjacency.iter().chain(pinning.iter()).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("graph weights must be finite and nonnegative".into()));
        }
        if pinning.iter().all(|b| *b == 0.0) {
            return Err(Error::Assumption {
                assumption: "leader reachability",
                detail: "leader unreachable: no agent is pinned to the leader".into(),
            });
        }
        Ok(Self { adjacency, pinning })
    }

    pub fn agent_count(&self) -> usize {
        self.pinning.len()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    /// In-neighbours of agent `i` (agents whose data `i` receives).
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agent_count()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinning[i] > 0.0
    }
}

/// Result of the leader-reachability check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub reachable: Vec<bool>,
    /// Zero-based indices of agents with no directed path from the leader.
    pub unreachable: Vec<usize>,
}

impl ValidationReport {
    pub fn all_reachable(&self) -> bool {
        self.unreachable.is_empty()
    }
}

/// Checks that every follower has a directed path from the leader, entering
/// through a pinning edge and following communication edges `j -> i`.
pub fn validate_topology(spec: &GraphSpec) -> ValidationReport {
    let m = spec.agent_count();
    let mut reachable = vec![false; m];
    let mut queue = VecDeque::new();
    for i in 0..m {
        if spec.is_pinned(i) {
            reachable[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..m {
            if !reachable[i] && spec.adjacency[(i, j)] > 0.0 {
                reachable[i] = true;
                queue.push_back(i);
            }
        }
    }
    let unreachable = (0..m).filter(|&i| !reachable[i]).collect();
    ValidationReport {
        reachable,
        unreachable,
    }
}

/// `L + B`: in-degree Laplacian of the follower graph plus the pinning gains.
pub fn laplacian_pinned(adjacency: &DMatrix<f64>, pinning: &DVector<f64>) -> DMatrix<f64> {
    let m = pinning.len();
    let mut lb = -adjacency.clone();
    for i in 0..m {
        lb[(i, i)] = adjacency.row(i).sum() - adjacency[(i, i)] + pinning[i];
    }
    lb
}

/// How the diagonal weighting `P` is built from `L_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PConstruction {
    /// `p_i = 1 / (L_B^{-1} 1)_i`, the standard M-matrix weighting.
    #[default]
    Reciprocal,
    /// `p = L_B^{-1} 1` taken literally.
    Literal,
}

impl std::str::FromStr for PConstruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reciprocal" => Ok(Self::Reciprocal),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!(
                "unknown P construction '{other}' (expected reciprocal or literal)"
            ))),
        }
    }
}

impl std::fmt::Display for PConstruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reciprocal => "reciprocal",
            Self::Literal => "literal",
        })
    }
}

/// Diagonal of `P` for a nonsingular pinned Laplacian.
pub fn p_matrix(lb: &DMatrix<f64>, construction: PConstruction) -> Result<DVector<f64>> {
    let m = lb.nrows();
    let q = lb
        .clone()
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .filter(|q| q.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Assumption {
            assumption: "leader reachability (L_B nonsingular)",
            detail: "pinned Laplacian is singular".into(),
        })?;
    if q.iter().any(|v| *v <= 0.0) {
        return Err(Error::Assumption {
            assumption: "leader reachability (L_B nonsingular M-matrix)",
            detail: format!("L_B^-1 1 has a nonpositive entry: {:?}", q.as_slice()),
        });
    }
    Ok(match construction {
        PConstruction::Reciprocal => q.map(|v| 1.0 / v),
        PConstruction::Literal => q,
    })
}

/// `Q = P L_B + L_B^T P`.
pub fn q_matrix(lb: &DMatrix<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let pl = DMatrix::from_diagonal(p) * lb;
    &pl + pl.transpose()
}
