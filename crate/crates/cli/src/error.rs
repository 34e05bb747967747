use std::fmt;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or model bundle (exit 2).
    Config(String),
    /// Nothing to process (exit 3).
    EmptyInput(String),
    /// Anything else (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Runtime(_) => 1,
            Self::Config(_) => 2,
            Self::EmptyInput(_) => 3,
        }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::EmptyInput(m) => write!(f, "empty input: {m}"),
            Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<thumbqc_core::Error> for CliError {
    fn from(e: thumbqc_core::Error) -> Self {
        use thumbqc_core::Error as E;
        match e {
            E::Config(_) => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<thumbqc_hpo::HpoError> for CliError {
    fn from(e: thumbqc_hpo::HpoError) -> Self {
        use thumbqc_hpo::HpoError as E;
        match e {
            E::Space(_) | E::Schedule(_) => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
