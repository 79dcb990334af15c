//! Time-varying, bounded, sign-preserving corruption of communication weights.
//!
//! Each fault is `amplitude * waveform(t) * factor`, where the factor is a
//! uniform draw on `[0, 1)` held constant over one hold period. Draws come from
//! a counter-based ChaCha stream indexed by `(seed, fault, hold index)`, so a
//! fault value is a pure function of `(t, seed)` and can be replayed at any
//! time without simulating the history.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraphSpec;
use crate::error::{Error, Result};

/// Zero-based location of a faulted weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultSite {
    /// `a_{to, from}`: the link carrying `from`'s data to `to`.
    Edge { to: usize, from: usize },
    /// `b_agent`: the pinning link from the leader.
    Pin { agent: usize },
}

impl std::fmt::Display for FaultSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FaultSite::Edge { to, from } => write!(f, "a_{}{}", to + 1, from + 1),
            FaultSite::Pin { agent } => write!(f, "b_{}", agent + 1),
        }
    }
}

/// Modulation shape; every variant is bounded by 1 in magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Waveform {
    Sine { frequency: f64, phase: f64 },
    Square { frequency: f64, phase: f64 },
    Constant,
}

impl Waveform {
    /// `frequency` is angular (rad/s).
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Waveform::Sine { frequency, phase } => (frequency * t + phase).sin(),
            Waveform::Square { frequency, phase } => {
                let s = (frequency * t + phase).sin();
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Waveform::Constant => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomFactor {
    /// Fresh uniform draw on `[0, 1)` for every hold period.
    Held,
    /// Deterministic factor in `[0, 1]`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkFault {
    pub site: FaultSite,
    pub amplitude: f64,
    pub waveform: Waveform,
    pub factor: RandomFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultProfile {
    faults: Vec<LinkFault>,
    hold_period: f64,
    seed: u64,
}

impl FaultProfile {
    pub fn new(faults: Vec<LinkFault>, hold_period: f64, seed: u64) -> Result<Self> {
        if !(hold_period.is_finite() && hold_period > 0.0) {
            return Err(Error::Config(format!(
                "fault hold period must be positive, got {hold_period}"
            )));
        }
        for (k, f) in faults.iter().enumerate() {
            if !(f.amplitude.is_finite() && f.amplitude >= 0.0) {
                return Err(Error::Config(format!(
                    "fault {} has invalid amplitude {}",
                    f.site, f.amplitude
                )));
            }
            if let RandomFactor::Fixed(v) = f.factor {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "fixed fault factor on {} must lie in [0, 1], got {v}",
                        f.site
                    )));
                }
            }
            if faults[..k].iter().any(|g| g.site == f.site) {
                return Err(Error::Config(format!("duplicate fault on {}", f.site)));
            }
        }
        Ok(Self {
            faults,
            hold_period,
            seed,
        })
    }

    /// A profile with no faults (nominal weights at all times).
    pub fn none(hold_period: f64) -> Self {
        Self {
            faults: Vec::new(),
            hold_period,
            seed: 0,
        }
    }

    pub fn faults(&self) -> &[LinkFault] {
        &self.faults
    }

    pub fn hold_period(&self) -> f64 {
        self.hold_period
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the profile against the nominal graph: every faulted weight must
    /// be nonzero and strictly larger than the fault amplitude, so the faulted
    /// weight keeps its sign and zero weights stay zero.
    pub fn validate_against(&self, spec: &GraphSpec) -> Result<()> {
        let m = spec.agent_count();
        for f in &self.faults {
            let nominal = match f.site {
                FaultSite::Edge { to, from } => {
                    if to >= m || from >= m || to == from {
                        return Err(Error::Config(format!("fault site {} out of range", f.site)));
                    }
                    spec.adjacency()[(to, from)]
                }
                FaultSite::Pin { agent } => {
                    if agent >= m {
                        return Err(Error::Config(format!("fault site {} out of range", f.site)));
                    }
                    spec.pinning()[agent]
                }
            };
            if nominal == 0.0 {
                return Err(Error::Config(format!(
                    "fault on {} targets a zero nominal weight (edges cannot be created)",
                    f.site
                )));
            }
            if f.amplitude >= nominal {
                return Err(Error::FaultAmplitude {
                    edge: f.site.to_string(),
                    amplitude: f.amplitude,
                    nominal,
                });
            }
        }
        Ok(())
    }

    /// Index of the hold period containing `t`.
    pub fn hold_index(&self, t: f64) -> u64 {
        // Nudge so grid times like 3 * 0.2 land in their own period.
        let k = (t / self.hold_period + 1e-9).floor();
        if k <= 0.0 {
            0
        } else {
            k as u64
        }
    }

    fn factor(&self, fault: usize, hold: u64) -> f64 {
        match self.faults[fault].factor {
            RandomFactor::Fixed(v) => v,
            RandomFactor::Held => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(fault as u64);
                // one f64 draw consumes two 32-bit words
                rng.set_word_pos(u128::from(hold) * 2);
                rng.gen::<f64>()
            }
        }
    }

    /// Value of fault `index` at time `t`, with the random factor taken from
    /// hold period `hold`.
    pub fn theta_held(&self, index: usize, t: f64, hold: u64) -> f64 {
        let f = &self.faults[index];
        f.amplitude * f.waveform.value(t) * self.factor(index, hold)
    }

    pub fn theta(&self, index: usize, t: f64) -> f64 {
        self.theta_held(index, t, self.hold_index(t))
    }

    /// All fault values at `t`, in declaration order.
    pub fn thetas(&self, t: f64) -> Vec<f64> {
        (0..self.faults.len()).map(|k| self.theta(k, t)).collect()
    }
}

/// Faulted weights `a_ij + θ^a_ij(t)`, `b_i + θ^b_i(t)`.
pub fn effective_weights(
    spec: &GraphSpec,
    faults: &FaultProfile,
    t: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    effective_weights_held(spec, faults, t, faults.hold_index(t))
}

/// Same as [`effective_weights`] but with the random factors taken from an
/// explicit hold period. Integrators use this so that all stages of one step
/// see the same factor even when the step ends on a period boundary.
pub fn effective_weights_held(
    spec: &GraphSpec,
    faults: &FaultProfile,
    t: f64,
    hold: u64,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = spec.adjacency().clone();
    let mut b = spec.pinning().clone();
    for (k, f) in faults.faults.iter().enumerate() {
        let theta = faults.theta_held(k, t, hold);
        match f.site {
            FaultSite::Edge { to, from } => a[(to, from)] += theta,
            FaultSite::Pin { agent } => b[agent] += theta,
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GraphSpec {
        let a = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 1., 0., 0.]);
        GraphSpec::new(a, DVector::from_vec(vec![1., 0., 0.])).unwrap()
    }

    fn sine(site: FaultSite, amplitude: f64, factor: RandomFactor) -> LinkFault {
        LinkFault {
            site,
            amplitude,
            waveform: Waveform::Sine {
                frequency: 1.0,
                phase: 0.0,
            },
            factor,
        }
    }

    #[test]
    fn zero_factor_leaves_nominal_weight() {
        let p = FaultProfile::new(
            vec![sine(FaultSite::Edge { to: 1, from: 0 }, 0.5, RandomFactor::Fixed(0.0))],
            0.2,
            1,
        )
        .unwrap();
        let (a, _) = effective_weights(&spec(), &p, 1.3);
        assert_eq!(a[(1, 0)], 1.0);
    }

    #[test]
    fn pinning_fault_stays_in_band() {
        let p = FaultProfile::new(
            vec![sine(FaultSite::Pin { agent: 0 }, 0.3, RandomFactor::Held)],
            0.2,
            42,
        )
        .unwrap();
        for k in 0..5000 {
            let t = k as f64 * 0.013;
            let (_, b) = effective_weights(&spec(), &p, t);
            assert!((0.7..=1.3).contains(&b[0]), "b1({t}) = {}", b[0]);
        }
    }

    #[test]
    fn zero_weights_stay_zero() {
        let p = FaultProfile::new(
            vec![
                sine(FaultSite::Edge { to: 1, from: 0 }, 0.5, RandomFactor::Held),
                sine(FaultSite::Pin { agent: 0 }, 0.3, RandomFactor::Held),
            ],
            0.2,
            3,
        )
        .unwrap();
        for k in 0..1000 {
            let (a, b) = effective_weights(&spec(), &p, k as f64 * 0.037);
            assert_eq!(a[(0, 1)], 0.0);
            assert_eq!(a[(2, 1)], 0.0);
            assert_eq!(b[1], 0.0);
            assert_eq!(b[2], 0.0);
        }
    }

    #[test]
    fn held_factor_is_constant_within_period_and_replayable() {
        let p = FaultProfile::new(
            vec![LinkFault {
                site: FaultSite::Pin { agent: 0 },
                amplitude: 0.5,
                waveform: Waveform::Constant,
                factor: RandomFactor::Held,
            }],
            0.2,
            9,
        )
        .unwrap();
        let a = p.theta(0, 0.41);
        let b = p.theta(0, 0.59);
        assert_eq!(a, b);
        assert_ne!(a, p.theta(0, 0.61));
        let q = p.clone();
        assert_eq!(q.theta(0, 0.41).to_bits(), a.to_bits());
        assert_ne!(p.clone().with_seed(10).theta(0, 0.41), a);
    }

    #[test]
    fn grid_times_land_in_their_own_period() {
        let p = FaultProfile::none(0.2);
        assert_eq!(p.hold_index(3.0 * 0.2), 3);
        assert_eq!(p.hold_index(0.0), 0);
        assert_eq!(p.hold_index(0.199), 0);
    }

    #[test]
    fn amplitude_at_or_above_nominal_is_rejected() {
        let p = FaultProfile::new(
            vec![sine(FaultSite::Edge { to: 1, from: 0 }, 1.0, RandomFactor::Held)],
            0.2,
            0,
        )
        .unwrap();
        assert!(matches!(
            p.validate_against(&spec()),
            Err(Error::FaultAmplitude { .. })
        ));
        let p = FaultProfile::new(
            vec![sine(FaultSite::Edge { to: 0, from: 1 }, 0.1, RandomFactor::Held)],
            0.2,
            0,
        )
        .unwrap();
        assert!(matches!(p.validate_against(&spec()), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_sites_rejected() {
        let f = sine(FaultSite::Pin { agent: 0 }, 0.1, RandomFactor::Held);
        assert!(FaultProfile::new(vec![f.clone(), f], 0.2, 0).is_err());
    }
}
