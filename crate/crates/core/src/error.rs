//! Error type shared by every module in the crate.

use std::fmt;

/// Crate-wide error enum.
#[derive(Debug)]
pub enum Error {
    /// Incompatible tensor/matrix shapes; carries both offending shapes.
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Malformed input file; carries the 1-based line number.
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    /// Invalid argument or unusable input data.
    Input(String),
    /// An API contract was violated by the caller (e.g. backward on a
    /// non-scalar, optimizer step with a missing gradient).
    Contract(String),
    /// A loss term became non-finite during training.
    Numeric {
        term: String,
        epoch: usize,
    },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Parse { path, line, msg } => {
                write!(f, "{path}:{line}: {msg}")
            }
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric { term, epoch } => {
                write!(f, "non-finite {term} loss at epoch {epoch}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_names_both_shapes() {
        let e = Error::Dimension {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3],
        };
        let s = e.to_string();
        assert!(s.contains("[2, 3]"));
        assert!(s.contains("matmul"));
    }

    #[test]
    fn parse_error_carries_line() {
        let e = Error::Parse {
            path: "x.content".into(),
            line: 17,
            msg: "bad feature".into(),
        };
        assert!(e.to_string().contains("x.content:17"));
    }
}
