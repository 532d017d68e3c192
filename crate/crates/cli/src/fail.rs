use std::fmt;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    /// Library error raised while building or validating a model.
    pub fn setup(e: qratchet::Error) -> Self {
        Failure::Config(e.to_string())
    }

    /// Library error raised during a computation.
    pub fn numeric(e: qratchet::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
