use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("quadrature failed to converge ({context}): best estimate {estimate:e}, error bound {error_bound:e}")]
    QuadratureFailure {
        context: String,
        estimate: f64,
        error_bound: f64,
    },

    #[error("numerical inconsistency in {what}: {first:e} vs {second:e} (relative gap {relative_gap:e})")]
    NumericalInconsistency {
        what: String,
        first: f64,
        second: f64,
        relative_gap: f64,
    },

    #[error(
        "coming-down criteria disagree: Schweinsberg says {schweinsberg_verdict}, Grey says {grey_verdict} \
         (partials {schweinsberg_partial:e} / {grey_partial:e})"
    )]
    CriteriaDisagreement {
        schweinsberg_verdict: bool,
        grey_verdict: bool,
        schweinsberg_partial: f64,
        grey_partial: f64,
    },

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("tail of u not resolved at q_max = {q_max:e}: local exponent {theta:.4} <= 1.05; increase q_max")]
    TailNotResolved { q_max: f64, theta: f64 },

    #[error("argument {t:e} outside resolvable range [{lo:e}, {hi:e}]")]
    Range { t: f64, lo: f64, hi: f64 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("enumeration limit exceeded: n = {n} > {limit}")]
    EnumerationLimit { n: u64, limit: u64 },

    #[error("bound violation in {lemma}: ratio grows along the grid ({detail})")]
    BoundViolation { lemma: String, detail: String },

    #[error("expression parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
