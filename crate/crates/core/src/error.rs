use thiserror::Error;

pub type Result<T> = std::result::Result<T, SmcError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("degenerate weights: no strictly positive weight")]
    DegenerateWeights,
    #[error("non-finite functional value at particle {index}")]
    NonFiniteFunctional { index: usize },
    #[error("non-finite weight at step {t}, particle {index}")]
    NonFiniteWeight { t: usize, index: usize },
    #[error("weight collapse at t = {t}")]
    WeightCollapse { t: usize },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<SmcError>,
    },
    #[error("impossible observation at t = {t}")]
    ImpossibleObservation { t: usize },
    #[error("unbounded functional: variation is not finite")]
    UnboundedFunctional,
    #[error("quadrature did not converge (achieved relative error {achieved:e})")]
    Quadrature { achieved: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

impl SmcError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SmcError::InvalidArgument(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        SmcError::InvalidModel(msg.into())
    }
}
