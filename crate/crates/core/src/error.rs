use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid density operator: {0}")]
    Invariant(String),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("relative entropy is infinite: support of rho not contained in support of sigma")]
    InfiniteRelativeEntropy,

    #[error("infeasible correlation matrix: {0}")]
    Infeasible(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("step size {dt} exceeds the stability limit {limit}")]
    StepSize { dt: f64, limit: f64 },

    #[error("non-finite value in hierarchy tier {tier} at t = {time}")]
    NonFinite { tier: usize, time: f64 },

    #[error("hierarchy has {size} auxiliary operators, above the cap of {cap}")]
    ResourceCap { size: usize, cap: usize },

    #[error("the two-body energy-entropy balance only holds for closed (unitary) trajectories")]
    NotClosedEvolution,

    #[error("rethermalization is not converging: {0}")]
    Rethermalization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
