use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::condition_number;

/// Condition-number threshold above which an input gain is treated as
/// singular.
pub const SINGULAR_GAIN_THRESHOLD: f64 = 1e12;

/// Top-derivative dynamics of an integrator-chain follower.
///
/// Implement this trait to simulate custom followers. Affine models only need
/// `drift` and `input_jacobian` (which is then `G(x)`); models with a
/// nonlinear input map must also override `actuation`, `invert_actuation` and
/// `is_affine`.
pub trait FollowerDynamics: Send + Sync {
    fn name(&self) -> &str;

    /// Chain order `r`.
    fn order(&self) -> usize;

    /// Output channels `n`.
    fn channels(&self) -> usize;

    /// Number of physical inputs.
    fn input_dim(&self) -> usize {
        self.channels()
    }

    /// `f(x)`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Jacobian of the input contribution with respect to `u`.
    fn input_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// Input contribution to the top derivative; `G(x) u` for affine models.
    fn actuation(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.input_jacobian(x, u) * u
    }

    fn is_affine(&self) -> bool {
        true
    }

    /// Input whose contribution equals `w`, ignoring the input box.
    fn invert_actuation(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.input_jacobian(x, &DVector::zeros(self.input_dim()));
        solve_gain(&g, w)
    }
}

/// Solves `G u = w`, refusing ill-conditioned gains.
pub(crate) fn solve_gain(g: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = if g.iter().all(|v| v.is_finite()) {
        condition_number(g)
    } else {
        f64::INFINITY
    };
    if !(condition <= SINGULAR_GAIN_THRESHOLD) {
        return Err(Error::SingularGain {
            agent: None,
            condition,
        });
    }
    g.clone().lu().solve(w).ok_or(Error::SingularGain {
        agent: None,
        condition,
    })
}

/// Pure integrator chain: `f = 0`, `G = I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Integrator {
    order: usize,
    channels: usize,
}

impl Integrator {
    pub fn new(order: usize, channels: usize) -> Self {
        Self { order, channels }
    }
}

impl FollowerDynamics for Integrator {
    fn name(&self) -> &str {
        "integrator"
    }

    fn order(&self) -> usize {
        self.order
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.channels)
    }

    fn input_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.channels, self.channels)
    }

    fn actuation(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }

    fn invert_actuation(&self, _x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(w.clone())
    }
}

/// Third-order single-channel followers with unit input gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinDynamics {
    /// `x1 x2 + x3 − x1³`
    Cubic,
    /// `x1 sin(x2) + cos²(x3)`
    Trigonometric,
    /// `−½ (x1 + x2 − 1)² (x3 − 1)`
    Polynomial,
}

impl BuiltinDynamics {
    pub fn key(&self) -> &'static str {
        match self {
            Self::Cubic => "cubic",
            Self::Trigonometric => "trigonometric",
            Self::Polynomial => "polynomial",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        [Self::Cubic, Self::Trigonometric, Self::Polynomial]
            .into_iter()
            .find(|d| d.key() == key)
    }
}

impl FollowerDynamics for BuiltinDynamics {
    fn name(&self) -> &str {
        self.key()
    }

    fn order(&self) -> usize {
        3
    }

    fn channels(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let f = match self {
            Self::Cubic => x1 * x2 + x3 - x1.powi(3),
            Self::Trigonometric => x1 * x2.sin() + x3.cos().powi(2),
            Self::Polynomial => -0.5 * (x1 + x2 - 1.0).powi(2) * (x3 - 1.0),
        };
        DVector::from_element(1, f)
    }

    fn input_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}
