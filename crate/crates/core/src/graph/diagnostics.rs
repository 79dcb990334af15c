//! Numerical evaluation of the observer-network gain condition.
//!
//! The κ constants are maxima/minima over time of spectral quantities built
//! from the faulted pinned Laplacian `L_B(t)` and the weighting `P(t)`. They
//! are sampled on a user-supplied time grid; time derivatives are central
//! differences taken inside the current fault hold period, where the faulted
//! weights are smooth.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{effective_weights_held, laplacian_pinned, p_matrix, q_matrix, FaultProfile, GraphSpec, PConstruction};
use crate::error::Result;
use crate::linalg::{eig_real_parts, min_singular_value, sym_max_eig, sym_min_eig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticOptions {
    pub construction: PConstruction,
    /// Bound on the spectral norm of the leader-matrix estimation error. κ₅ is
    /// only evaluated when this is supplied.
    pub s_tilde_bound: Option<f64>,
    /// Finite-difference step; defaults to a tenth of the fault hold period.
    pub fd_step: Option<f64>,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self {
            construction: PConstruction::Reciprocal,
            s_tilde_bound: None,
            fd_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphDiagnostics {
    pub lb_min_eig_real: f64,
    pub lb_min_singular: f64,
    /// Diagonal of `P` for the nominal (fault-free) graph.
    pub p_vec: Vec<f64>,
    pub q_min_eig: f64,
    pub q_positive_definite: bool,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    /// `None` when no estimation-error bound was supplied.
    pub kappa5: Option<f64>,
    /// Computed with κ₅ = 0 when κ₅ is not evaluated.
    pub kappa_star: f64,
    pub min_c_xi: f64,
    /// `1 + κ*/κ₀`, the threshold `min c_ξ` must exceed.
    pub c_xi_threshold: f64,
    pub condition_theorem1_holds: bool,
    pub samples: usize,
}

struct Snapshot {
    lb: DMatrix<f64>,
    p: DVector<f64>,
}

fn snapshot(
    spec: &GraphSpec,
    faults: &FaultProfile,
    t: f64,
    hold: u64,
    construction: PConstruction,
) -> Result<Snapshot> {
    let (a, b) = effective_weights_held(spec, faults, t, hold);
    let lb = laplacian_pinned(&a, &b);
    let p = p_matrix(&lb, construction)?;
    Ok(Snapshot { lb, p })
}

/// Evaluates κ₀…κ₅, κ* and the observer gain condition
/// `min_i c_ξi > 1 + κ*/κ₀` over `sample_times`.
///
/// A singular `L_B` at any sample is an error (the topology assumption is
/// broken); a non-positive-definite `Q` is only flagged.
pub fn gain_condition_report(
    spec: &GraphSpec,
    faults: &FaultProfile,
    leader_s0: &DMatrix<f64>,
    c_xi: &[f64],
    sample_times: &[f64],
    options: DiagnosticOptions,
) -> Result<GraphDiagnostics> {
    let construction = options.construction;
    let step = options.fd_step.unwrap_or(faults.hold_period() / 10.0);
    let s0_gram_max = sym_max_eig(&(leader_s0.transpose() * leader_s0)).max(0.0);

    let nominal_lb = laplacian_pinned(spec.adjacency(), spec.pinning());
    let nominal_p = p_matrix(&nominal_lb, construction)?;

    let mut lb_min_eig_real = f64::INFINITY;
    let mut lb_min_singular = f64::INFINITY;
    let mut kappa0 = f64::INFINITY;
    let mut kappa1 = 0.0f64;
    let mut kappa2 = 0.0f64;
    let mut kappa3 = 0.0f64;

    for &t in sample_times {
        let hold = faults.hold_index(t);
        let snap = snapshot(spec, faults, t, hold, construction)?;

        lb_min_eig_real = eig_real_parts(&snap.lb)
            .into_iter()
            .fold(lb_min_eig_real, f64::min);
        lb_min_singular = lb_min_singular.min(min_singular_value(&snap.lb));
        kappa0 = kappa0.min(sym_min_eig(&q_matrix(&snap.lb, &snap.p)));
        kappa1 = kappa1.max(snap.p.iter().map(|p| p * p).fold(0.0, f64::max));

        // Derivatives within the current hold period.
        let (lo, hi) = if t - step >= 0.0 { (t - step, t + step) } else { (t, t + step) };
        let before = snapshot(spec, faults, lo, hold, construction)?;
        let after = snapshot(spec, faults, hi, hold, construction)?;
        let span = hi - lo;
        let p_dot = (&after.p - &before.p) / span;
        let lb_dot = (&after.lb - &before.lb) / span;

        kappa2 = kappa2.max(p_dot.iter().map(|v| v * v).fold(0.0, f64::max));

        if let Some(lb_inv) = snap.lb.clone().try_inverse() {
            let p2 = DMatrix::from_diagonal(&snap.p.map(|v| v * v));
            let m = p2 * lb_inv.transpose() * lb_dot.transpose() * &lb_dot * &snap.lb;
            let max_re = eig_real_parts(&m).into_iter().fold(0.0, f64::max);
            kappa3 = kappa3.max(max_re);
        }
    }

    if sample_times.is_empty() {
        let q = q_matrix(&nominal_lb, &nominal_p);
        kappa0 = sym_min_eig(&q);
        lb_min_eig_real = eig_real_parts(&nominal_lb).into_iter().fold(f64::INFINITY, f64::min);
        lb_min_singular = min_singular_value(&nominal_lb);
        kappa1 = nominal_p.iter().map(|p| p * p).fold(0.0, f64::max);
    }

    let kappa4 = kappa1 * s0_gram_max;
    let kappa5 = options.s_tilde_bound.map(|beta| kappa1 * beta * beta);
    let q_positive_definite = kappa0 > 0.0;
    let min_c_xi = c_xi.iter().copied().fold(f64::INFINITY, f64::min);

    let (kappa_star, c_xi_threshold, holds) = if q_positive_definite {
        let k5 = kappa5.unwrap_or(0.0);
        let star = 5.0 * kappa2 / (4.0 * kappa0)
            + 5.0 * kappa3 / kappa0
            + 5.0 * kappa4 / kappa0
            + 5.0 * k5 / kappa0;
        let threshold = 1.0 + star / kappa0;
        (star, threshold, min_c_xi > threshold)
    } else {
        (f64::INFINITY, f64::INFINITY, false)
    };

    Ok(GraphDiagnostics {
        lb_min_eig_real,
        lb_min_singular,
        p_vec: nominal_p.iter().copied().collect(),
        q_min_eig: kappa0,
        q_positive_definite,
        kappa0,
        kappa1,
        kappa2,
        kappa3,
        kappa4,
        kappa5,
        kappa_star,
        min_c_xi,
        c_xi_threshold,
        condition_theorem1_holds: holds,
        samples: sample_times.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FaultSite, LinkFault, RandomFactor, Waveform};

    fn example1() -> GraphSpec {
        let a = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 1., 0., 0.]);
        GraphSpec::new(a, DVector::from_vec(vec![1., 0., 0.])).unwrap()
    }

    fn companion() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., -1., -1.16, -2.])
    }

    fn times() -> Vec<f64> {
        (0..50).map(|k| k as f64 * 0.21).collect()
    }

    #[test]
    fn constant_graph_has_zero_derivative_constants() {
        let d = gain_condition_report(
            &example1(),
            &FaultProfile::none(0.2),
            &companion(),
            &[2.0; 3],
            &times(),
            DiagnosticOptions::default(),
        )
        .unwrap();
        assert!(d.kappa2.abs() < 1e-12);
        assert!(d.kappa3.abs() < 1e-12);
        assert!((d.kappa0 - (3.0 - 3f64.sqrt()) / 2.0).abs() < 1e-9);
        assert!((d.kappa1 - 1.0).abs() < 1e-12);
        assert!(d.kappa5.is_none());
        assert!(d.lb_min_eig_real > 0.0);
    }

    #[test]
    fn zero_leader_matrix_gives_zero_kappa4() {
        let d = gain_condition_report(
            &example1(),
            &FaultProfile::none(0.2),
            &DMatrix::zeros(3, 3),
            &[2.0; 3],
            &times(),
            DiagnosticOptions::default(),
        )
        .unwrap();
        assert_eq!(d.kappa4, 0.0);
        // κ* = 0, so any c_ξ > 1 satisfies the condition
        assert!(d.condition_theorem1_holds);
    }

    #[test]
    fn faults_produce_positive_derivative_constants() {
        let faults = FaultProfile::new(
            vec![LinkFault {
                site: FaultSite::Pin { agent: 0 },
                amplitude: 0.3,
                waveform: Waveform::Sine {
                    frequency: 1.0,
                    phase: 0.0,
                },
                factor: RandomFactor::Fixed(1.0),
            }],
            0.2,
            0,
        )
        .unwrap();
        let d = gain_condition_report(
            &example1(),
            &faults,
            &companion(),
            &[2.0; 3],
            &times(),
            DiagnosticOptions {
                s_tilde_bound: Some(0.5),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(d.kappa2 > 0.0);
        assert!(d.kappa3 > 0.0);
        assert!(d.kappa0 > 0.0 && d.kappa0 < (3.0 - 3f64.sqrt()) / 2.0 + 1e-12);
        assert!((d.kappa5.unwrap() - d.kappa1 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn literal_construction_flags_singular_q() {
        let d = gain_condition_report(
            &example1(),
            &FaultProfile::none(0.2),
            &companion(),
            &[2.0; 3],
            &[0.0],
            DiagnosticOptions {
                construction: PConstruction::Literal,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(d.kappa0.abs() < 1e-9);
        assert!(!d.condition_theorem1_holds);
    }
}
