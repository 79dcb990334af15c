use thiserror::Error;

/// Errors raised while configuring or running a formation-tracking simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "fault on {edge} has amplitude {amplitude} >= nominal weight {nominal}; \
         the faulted weight could change sign"
    )]
    FaultAmplitude {
        edge: String,
        amplitude: f64,
        nominal: f64,
    },

    #[error("{assumption} violated: {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("non-finite value in {what}{}{}", agent_suffix(*.agent), time_suffix(*.t))]
    NumericDomain {
        what: String,
        agent: Option<usize>,
        t: Option<f64>,
    },

    #[error("input gain of agent {} is singular (condition estimate {condition:e})", .agent.map(|a| a + 1).unwrap_or(0))]
    SingularGain {
        agent: Option<usize>,
        condition: f64,
    },

    #[error("scenario document: {0}")]
    Document(String),

    #[error("i/o: {0}")]
    Io(String),
}

fn agent_suffix(agent: Option<usize>) -> String {
    agent.map(|a| format!(" (agent {})", a + 1)).unwrap_or_default()
}

fn time_suffix(t: Option<f64>) -> String {
    t.map(|t| format!(" at t = {t}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NumericDomain {
            what: what.into(),
            agent: None,
            t: None,
        }
    }

    /// Attaches agent and time context to numeric errors raised deep inside
    /// model evaluations.
    pub fn with_context(self, agent: Option<usize>, t: f64) -> Self {
        match self {
            Error::NumericDomain { what, agent: a, .. } => Error::NumericDomain {
                what,
                agent: a.or(agent),
                t: Some(t),
            },
            Error::SingularGain {
                agent: a,
                condition,
            } => Error::SingularGain {
                agent: a.or(agent),
                condition,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
