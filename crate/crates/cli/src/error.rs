use std::fmt;

/// `Invalid` covers bad flags, unreadable or malformed inputs and configs a
/// learner rejects (exit 1). `Internal` is everything else (exit 2).
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(
    qe_core::corpus::CorpusError,
    qe_core::chrf::ChrfError,
    qe_core::features::FeatureError,
    qe_core::tokenizer::TokenizerError,
    qe_core::model::ModelError,
    qe_core::eval::EvalError
);
