use thiserror::Error;

pub type Result<T> = std::result::Result<T, HedgeError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HedgeError {
    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("time grid error: {0}")]
    InvalidGrid(String),

    #[error("grid resolution insufficient: {0}")]
    GridResolution(String),

    #[error("grid alignment: {0}")]
    GridAlignment(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("evaluation at or beyond maturity: t = {t}, maturity = {maturity}")]
    MaturityDomain { t: f64, maturity: f64 },

    #[error("value outside admissible range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("quadrature did not converge: {0}")]
    Precision(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

impl HedgeError {
    pub(crate) fn param(name: &'static str, value: f64, constraint: impl Into<String>) -> Self {
        HedgeError::InvalidParameter {
            name,
            value,
            constraint: constraint.into(),
        }
    }

    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HedgeError::InvalidParameter { .. }
                | HedgeError::UnsupportedModel(_)
                | HedgeError::InvalidGrid(_)
                | HedgeError::Configuration(_)
                | HedgeError::Argument(_)
                | HedgeError::Range(_)
        )
    }
}
