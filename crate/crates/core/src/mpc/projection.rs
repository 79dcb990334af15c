//! Euclidean projection onto the intersection of an input box and one
//! half-space, by Dykstra's alternating projections.

use nalgebra::DVector;

/// `{u : aᵀu ≤ b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub a: DVector<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        self.a.dot(u)
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        self.value(u) <= self.b
    }

    fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let excess = self.value(y) - self.b;
        let norm2 = self.a.norm_squared();
        if excess <= 0.0 || norm2 == 0.0 {
            y.clone()
        } else {
            y - &self.a * (excess / norm2)
        }
    }
}

/// Clamp into `[−u_lo, u_hi]`.
pub fn project_box(y: &DVector<f64>, u_lo: &DVector<f64>, u_hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        y.len(),
        y.iter().enumerate().map(|(j, v)| v.clamp(-u_lo[j], u_hi[j])),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionOutcome {
    Feasible {
        point: DVector<f64>,
        iterations: usize,
    },
    /// The box and the half-space do not intersect; `point` is the box
    /// corner minimising `aᵀu` and `violation = aᵀpoint − b > 0`.
    Infeasible {
        point: DVector<f64>,
        violation: f64,
    },
}

impl ProjectionOutcome {
    pub fn point(&self) -> &DVector<f64> {
        match self {
            Self::Feasible { point, .. } | Self::Infeasible { point, .. } => point,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible { .. })
    }
}

/// Minimiser of `aᵀu` over the box; ties keep the clamped `y`.
fn least_value_point(y: &DVector<f64>, hs: &Halfspace, u_lo: &DVector<f64>, u_hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        y.len(),
        hs.a.iter().enumerate().map(|(j, a)| {
            if *a > 0.0 {
                -u_lo[j]
            } else if *a < 0.0 {
                u_hi[j]
            } else {
                y[j].clamp(-u_lo[j], u_hi[j])
            }
        }),
    )
}

/// Refines a multiplier estimate for the projection. The exact projection is
/// `clamp(y − μa)` at the root `μ ≥ 0` of the nonincreasing, piecewise linear
/// `g(μ) = aᵀclamp(y − μa) − b`; Newton steps on the current linear piece are
/// kept inside a bracket and replaced by bisection when they leave it.
/// Returns the point on the feasible side of the bracket.
fn refine_multiplier(
    y: &DVector<f64>,
    mu_guess: f64,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    hs: &Halfspace,
) -> DVector<f64> {
    let at = |mu: f64| project_box(&(y - &hs.a * mu), u_lo, u_hi);
    let g = |u: &DVector<f64>| hs.value(u) - hs.b;
    let (mut lo, mut hi) = (0.0, mu_guess.max(1e-12));
    let mut hi_point = at(hi);
    let mut grow = 0;
    while g(&hi_point) > 0.0 && grow < 200 {
        lo = hi;
        hi *= 2.0;
        hi_point = at(hi);
        grow += 1;
    }
    let mut mu = mu_guess.clamp(lo, hi);
    for _ in 0..100 {
        let point = at(mu);
        let residual = g(&point);
        if residual <= 0.0 {
            hi = mu;
            hi_point = point.clone();
            if residual == 0.0 {
                break;
            }
        } else {
            lo = mu;
        }
        let slope: f64 = (0..y.len())
            .filter(|&j| point[j] > -u_lo[j] && point[j] < u_hi[j])
            .map(|j| hs.a[j] * hs.a[j])
            .sum();
        let newton = if slope > 0.0 { mu + residual / slope } else { f64::NAN };
        mu = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    hi_point
}

/// Projects `y` onto `box ∩ halfspace`.
///
/// Runs at most `max_iterations` Dykstra sweeps and refines the multiplier
/// they accumulate. The result is clamped into the box and, if it still sits outside
/// the half-space, moved along the
/// segment towards the box point of least `aᵀu`, so that a returned feasible
/// point satisfies both sets exactly.
pub fn dykstra_box_halfspace(
    y: &DVector<f64>,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    hs: &Halfspace,
    max_iterations: usize,
    tolerance: f64,
) -> ProjectionOutcome {
    let anchor = least_value_point(y, hs, u_lo, u_hi);
    let anchor_value = hs.value(&anchor);
    if anchor_value > hs.b {
        return ProjectionOutcome::Infeasible {
            point: anchor,
            violation: anchor_value - hs.b,
        };
    }

    let mut x = y.clone();
    let mut p = DVector::zeros(y.len());
    let mut q = DVector::zeros(y.len());
    let mut iterations = 0;
    for _ in 0..max_iterations {
        iterations += 1;
        let in_box = project_box(&(&x + &p), u_lo, u_hi);
        p = &x + &p - &in_box;
        let next = hs.project(&(&in_box + &q));
        q = &in_box + &q - &next;
        let moved = (&next - &x).norm();
        let gap = (&next - &in_box).norm();
        x = next;
        if moved <= tolerance && gap <= tolerance {
            break;
        }
    }

    // q accumulates the half-space corrections, a multiple of a
    let norm2 = hs.a.norm_squared();
    let mut point = project_box(&x, u_lo, u_hi);
    if norm2 > 0.0 && !hs.contains(&project_box(y, u_lo, u_hi)) {
        point = refine_multiplier(y, hs.a.dot(&q) / norm2, u_lo, u_hi, hs);
    }
    let value = hs.value(&point);
    if value > hs.b {
        let tau = ((value - hs.b) / (value - anchor_value)).clamp(0.0, 1.0);
        let towards = &anchor - &point;
        // rounding can leave the boundary point marginally outside
        let mut extra = 0.0;
        let restored = loop {
            let candidate = &point + &towards * (tau + extra).min(1.0);
            if hs.contains(&candidate) || tau + extra >= 1.0 {
                break candidate;
            }
            extra = (2.0 * extra).max(f64::EPSILON);
        };
        point = if hs.contains(&restored) { restored } else { anchor };
    }
    ProjectionOutcome::Feasible { point, iterations }
}
