use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad file, JSON, dimensions or numbers; exit code 3.
    #[error("{0}")]
    Input(String),
    /// The solver could not produce a usable answer; exit code 4.
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 3,
            CliError::Solver(_) => 4,
        }
    }

    /// The one-line machine-parsable form printed on stderr.
    pub fn line(&self) -> String {
        let (tag, msg) = match self {
            CliError::Input(m) => ("input", m),
            CliError::Solver(m) => ("solver", m),
        };
        format!("ERROR {tag} {}", msg.replace('\n', " "))
    }
}

impl From<qmaj::Error> for CliError {
    fn from(e: qmaj::Error) -> Self {
        match e {
            qmaj::Error::Solver(_) | qmaj::Error::Inaccurate { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
