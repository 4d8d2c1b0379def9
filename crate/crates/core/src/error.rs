use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A temperature or control value lies outside a configured validity range.
    #[error("{what} = {value} outside valid range [{min}, {max}]")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("bubble point not bracketed in T = [{t_low}, {t_high}] K (residuals {f_low:e}, {f_high:e} Pa)")]
    Bracket {
        t_low: f64,
        t_high: f64,
        f_low: f64,
        f_high: f64,
    },

    #[error("{0} did not converge")]
    Convergence(String),

    #[error("non-finite sensitivity at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("singular information matrix (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("model evaluation failed at experiment {index}: {source}")]
    Experiment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("all {starts} design starts failed: {reasons}")]
    DesignFailed { starts: usize, reasons: String },
}

impl Error {
    pub(crate) fn at_experiment(self, index: usize) -> Self {
        Error::Experiment {
            index,
            source: Box::new(self),
        }
    }
}
