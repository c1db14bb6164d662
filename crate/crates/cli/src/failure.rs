use std::fmt;
use std::process::ExitCode;

/// A failed command together with the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input data.
    Input(String),
    Core(vfi_core::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        use vfi_core::Error as E;
        match self {
            Failure::Input(_) => 2,
            Failure::Core(E::Checkpoint { .. }) => 3,
            Failure::Core(E::NonFinite(_) | E::Tensor(_)) => 4,
            Failure::Core(_) => 2,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(msg) => f.write_str(msg),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<vfi_core::Error> for Failure {
    fn from(e: vfi_core::Error) -> Self {
        Failure::Core(e)
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Shorthand for an input failure.
pub fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

pub fn io(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}
