//! Sampling-based choice of the fallback robustness gain `k_s` and of the
//! saturation lower bound `χ̲`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{saturate, SlidingParams, StabilityTerms};
use crate::error::{Error, Result};
use crate::models::FollowerModel;

const SAFETY_FACTOR: f64 = 1.5;
const FLOOR: f64 = 1e-6;
/// Box corners are sampled exhaustively up to this state dimension.
const MAX_CORNER_DIM: usize = 10;

/// Box of follower states to sample, with the leader and displacement
/// estimates held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneRegion {
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub xi_hat: DVector<f64>,
    pub s_hat: DMatrix<f64>,
    pub delta_hat: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneResult {
    pub k_s: f64,
    pub chi_lower: DVector<f64>,
    /// Largest sampled actuation shortfall `‖(χ − I) v_a‖₁`.
    pub sampled_bound: f64,
    pub samples: usize,
}

/// `k_s = 1.5 · max ‖(χ − I) v_a‖₁` over `samples` random states of the
/// region (plus its corners for small state dimensions), floored at a small
/// positive value. The shortfall is measured as
/// `actuation(x, sat(G⁻¹ v_a)) − v_a`, which equals `(χ − I) v_a` for a
/// diagonal input gain.
///
/// `χ̲` defaults per channel to `min(1, bound / max |(G⁻¹ v_a)_j|)` when the
/// input and output dimensions agree, and to one otherwise.
pub fn k_s_autotune(
    model: &FollowerModel,
    params: &SlidingParams,
    region: &AutotuneRegion,
    samples: usize,
    seed: u64,
) -> Result<AutotuneResult> {
    let d = model.state_dim();
    if region.x_lo.len() != d || region.x_hi.len() != d {
        return Err(Error::Dimension {
            context: "autotune region".into(),
            expected: d,
            actual: region.x_lo.len(),
        });
    }
    let empty = samples == 0
        || region
            .x_lo
            .iter()
            .zip(region.x_hi.iter())
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi));
    if empty {
        return Err(Error::Config(
            "k_s autotune region is empty; set k_s explicitly".into(),
        ));
    }

    let m = model.input_dim();
    let square = m == model.channels();
    let mut peak = DVector::<f64>::zeros(m);
    let mut bound = 0.0f64;
    let mut count = 0;
    let mut visit = |x: DVector<f64>| -> Result<()> {
        let terms = StabilityTerms::new(model, params, &x, &region.xi_hat, &region.s_hat, &region.delta_hat);
        let v_a = terms.v_a();
        let v = model.dynamics().invert_actuation(&x, &v_a)?;
        let (u, _) = saturate(&v, model.u_lo(), model.u_hi());
        let shortfall = (model.dynamics().actuation(&x, &u) - &v_a).abs().sum();
        bound = bound.max(shortfall);
        for j in 0..m {
            peak[j] = peak[j].max(v[j].abs());
        }
        count += 1;
        Ok(())
    };

    if d <= MAX_CORNER_DIM {
        for mask in 0u32..(1 << d) {
            let corner = DVector::from_fn(d, |i, _| {
                if mask & (1 << i) != 0 {
                    region.x_hi[i]
                } else {
                    region.x_lo[i]
                }
            });
            visit(corner)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let x = DVector::from_fn(d, |i, _| {
            let (lo, hi) = (region.x_lo[i], region.x_hi[i]);
            if lo < hi {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        });
        visit(x)?;
    }

    let chi_lower = if square {
        DVector::from_fn(m, |j, _| {
            let limit = model.u_lo()[j].min(model.u_hi()[j]);
            if peak[j] > limit {
                limit / peak[j]
            } else {
                1.0
            }
        })
    } else {
        DVector::from_element(model.channels(), 1.0)
    };

    Ok(AutotuneResult {
        k_s: (SAFETY_FACTOR * bound).max(FLOOR),
        chi_lower,
        sampled_bound: bound,
        samples: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Integrator;
    use std::sync::Arc;

    fn scalar(bound: f64) -> (FollowerModel, SlidingParams) {
        let model =
            FollowerModel::symmetric(Arc::new(Integrator::new(1, 1)), DVector::from_element(1, bound)).unwrap();
        let params = SlidingParams::new(vec![], 1.0, 1.0, DVector::from_element(1, 1.0)).unwrap();
        (model, params)
    }

    fn region(lo: f64, hi: f64) -> AutotuneRegion {
        AutotuneRegion {
            x_lo: DVector::from_element(1, lo),
            x_hi: DVector::from_element(1, hi),
            xi_hat: DVector::zeros(1),
            s_hat: DMatrix::zeros(1, 1),
            delta_hat: DVector::zeros(1),
        }
    }

    #[test]
    fn scalar_worst_case() {
        // v_a = −x with |x| ≤ 5 and bound 3: worst shortfall 2 at |v_a| = 5
        let (model, params) = scalar(3.0);
        let res = k_s_autotune(&model, &params, &region(-5.0, 5.0), 10_000, 0).unwrap();
        assert!((res.sampled_bound - 2.0).abs() < 1e-12);
        assert!((res.k_s - 3.0).abs() < 1e-12);
        assert!((res.chi_lower[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn unsaturated_region_gives_floor() {
        let (model, params) = scalar(3.0);
        let res = k_s_autotune(&model, &params, &region(-1.0, 1.0), 1000, 0).unwrap();
        assert!(res.k_s > 0.0 && res.k_s < 1e-3);
        assert_eq!(res.chi_lower[0], 1.0);
    }

    #[test]
    fn empty_region_is_an_error() {
        let (model, params) = scalar(3.0);
        assert!(matches!(
            k_s_autotune(&model, &params, &region(1.0, -1.0), 100, 0),
            Err(Error::Config(_))
        ));
    }
}
