use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Matrix shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A structural invariant of the plant or exosystem is violated.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("system is not controllable (rank of controllability matrix {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },

    #[error("relative degree undefined for output {output}: C_k A^j B = 0 for all j < n")]
    RelativeDegreeUndefined { output: usize },

    #[error("system not left-invertible at this tolerance: det R(lambda) vanishes identically")]
    DegeneratePencil,

    /// Regulator equations have no solution because an exosystem eigenvalue
    /// coincides with an invariant zero.
    #[error("regulator equations unsolvable{}: zero coincides with exosystem eigenvalue lambda={}", fmt_block(*.block), fmt_complex(.eigenvalue))]
    Unsolvable {
        block: Option<usize>,
        eigenvalue: Complex64,
    },

    #[error("output not flat (delta={delta} < n={n}); compensate zeros or use ORT")]
    NotFlat { delta: usize, n: usize },

    #[error("decoupling matrix D* is singular (condition {cond:.3e})")]
    SingularDecoupling { cond: f64 },

    #[error("error dynamics not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Result is numerically unreliable (structure lost, residual blow-up).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn fmt_block(block: Option<usize>) -> String {
    match block {
        Some(k) => format!(" (column block {})", k + 1),
        None => String::new(),
    }
}

pub(crate) fn fmt_complex(z: &Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im > 0.0 {
        format!("{}+{}i", z.re, z.im)
    } else {
        format!("{}-{}i", z.re, -z.im)
    }
}

/// Non-fatal diagnostics attached to results.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Warning {
    pub code: String,
    pub detail: String,
}

impl Warning {
    pub const UNSTABLE_INTERNAL_DYNAMICS: &'static str = "UNSTABLE_INTERNAL_DYNAMICS";
    pub const ILL_CONDITIONED_TRANSFORM: &'static str = "ILL_CONDITIONED_TRANSFORM";
    pub const DECAYING_EXOSYSTEM_MODE: &'static str = "DECAYING_EXOSYSTEM_MODE";
    pub const UNSTABLE_TRACKING_DYNAMICS: &'static str = "UNSTABLE_TRACKING_DYNAMICS";

    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}
