use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// The union graph over a window of rounds was not strongly connected.
    #[error("rounds {first}..={last}: union graph is not strongly connected (window B = {window})")]
    Connectivity {
        first: usize,
        last: usize,
        window: usize,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("oracle does not provide {0}; full-information mode needs analytic subgradients")]
    MissingSubgradient(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
