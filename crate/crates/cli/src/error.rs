use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Internal(String),
    Input(String),
    Gateway(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::Gateway(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Internal(m) => write!(f, "internal error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Gateway(m) => write!(f, "gateway error: {m}"),
        }
    }
}

impl From<sae_embed::Error> for CliError {
    fn from(e: sae_embed::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Gateway(e.to_string())
        }
    }
}

impl From<sae_embed::GatewayError> for CliError {
    fn from(e: sae_embed::GatewayError) -> Self {
        CliError::Gateway(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
