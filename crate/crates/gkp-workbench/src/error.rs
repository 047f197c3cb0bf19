use gkp_sim::GkpError;

/// CLI process exit codes: validation-class failures (bad inputs, versions,
/// synthesis gaps), exhausted optimization budgets, and I/O.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum WorkbenchError {
    Validation(String),
    Convergence(String),
    Io(String),
}

impl WorkbenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Validation(_) => EXIT_VALIDATION,
            WorkbenchError::Convergence(_) => EXIT_CONVERGENCE,
            WorkbenchError::Io(_) => EXIT_IO,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        WorkbenchError::Validation(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        WorkbenchError::Io(msg.into())
    }
}

impl std::fmt::Display for WorkbenchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorkbenchError::Validation(m) => write!(f, "validation: {m}"),
            WorkbenchError::Convergence(m) => write!(f, "convergence: {m}"),
            WorkbenchError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl std::error::Error for WorkbenchError {}

impl From<GkpError> for WorkbenchError {
    fn from(e: GkpError) -> Self {
        match e {
            GkpError::Convergence(m) => WorkbenchError::Convergence(m),
            GkpError::Io(e) => WorkbenchError::Io(e.to_string()),
            other => WorkbenchError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for WorkbenchError {
    fn from(e: std::io::Error) -> Self {
        WorkbenchError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WorkbenchError>;
