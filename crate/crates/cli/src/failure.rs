use std::fmt;

/// Command failure, carrying the process exit code class.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ratatouille::Error> for Failure {
    fn from(e: ratatouille::Error) -> Self {
        use ratatouille::Error as E;
        match e {
            E::Config(_) | E::Weights(_) => Failure::Config(e.to_string()),
            E::Io(_) | E::Csv(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
