use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad error classes. The CLI maps each class to one exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Io,
    Data,
    Coverage,
    Model,
    Fit,
    Weighting,
    Sensitivity,
    UnobservedInTrial,
    Simulation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("data: {0}")]
    Csv(#[from] csv::Error),

    #[error("data: no rows in {0}")]
    NoRows(String),

    #[error("data: column `{0}` not found")]
    MissingColumn(String),

    #[error("data: column `{column}` row {row}: {reason}")]
    BadValue { column: String, row: usize, reason: String },

    #[error("data: {0}")]
    Invalid(String),

    #[error("roles: {0}")]
    Roles(String),

    #[error("coverage: {0}")]
    Coverage(String),

    #[error("model: rank-deficient design; term `{term}` is collinear with preceding columns")]
    RankDeficient { term: String },

    #[error("model: {0}")]
    Model(String),

    #[error("fit: normal equations are singular")]
    Singular,

    #[error("fit: no convergence after {iterations} iterations (last relative change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("fit: complete or quasi-complete separation; coefficient of `{term}` diverged")]
    Separation { term: String },

    #[error("fit: {0}")]
    Fit(String),

    #[error("weighting: {0}")]
    Weighting(String),

    #[error("sensitivity: {0}")]
    Sensitivity(String),

    #[error(
        "effect modifier `{0}` is not observed in the trial. Neither the outcome-model-based nor \
         the weighted-outcome-model-based sensitivity analysis extends to a modifier unobserved in \
         the trial: without weighting its interaction coefficient is unidentified, and with \
         weighting the analysis would depend on the modifier's mean in the weighted trial, which \
         cannot serve as a sensitivity parameter"
    )]
    UnobservedInTrial(String),

    #[error("simulation: {0}")]
    Simulation(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::Csv(_)
            | Error::NoRows(_)
            | Error::MissingColumn(_)
            | Error::BadValue { .. }
            | Error::Invalid(_)
            | Error::Roles(_) => ErrorClass::Data,
            Error::Coverage(_) => ErrorClass::Coverage,
            Error::RankDeficient { .. } | Error::Model(_) => ErrorClass::Model,
            Error::Singular | Error::NoConvergence { .. } | Error::Separation { .. } | Error::Fit(_) => ErrorClass::Fit,
            Error::Weighting(_) => ErrorClass::Weighting,
            Error::Sensitivity(_) => ErrorClass::Sensitivity,
            Error::UnobservedInTrial(_) => ErrorClass::UnobservedInTrial,
            Error::Simulation(_) => ErrorClass::Simulation,
        }
    }
}
