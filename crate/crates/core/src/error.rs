use std::fmt;

/// Where a non-finite value was produced. Context frames are pushed from the
/// innermost operation outwards (kernel, then layer, then batch/epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct Overflow {
    pub kind: String,
    pub degree: Option<u32>,
    pub magnitude: f64,
    pub location: Vec<String>,
}

impl fmt::Display for Overflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numeric overflow in {}", self.kind)?;
        if let Some(n) = self.degree {
            write!(f, " (degree {n})")?;
        }
        write!(f, ", magnitude {:e}", self.magnitude)?;
        if !self.location.is_empty() {
            let frames: Vec<&str> = self.location.iter().rev().map(String::as_str).collect();
            write!(f, " at {}", frames.join(" / "))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("{0}")]
    Overflow(Box<Overflow>),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn overflow(kind: impl Into<String>, degree: Option<u32>, magnitude: f64) -> Self {
        Error::Overflow(Box::new(Overflow {
            kind: kind.into(),
            degree,
            magnitude,
            location: Vec::new(),
        }))
    }

    /// Attaches a location frame to overflow errors; other variants pass through.
    pub fn at(self, frame: impl FnOnce() -> String) -> Self {
        match self {
            Error::Overflow(mut o) => {
                o.location.push(frame());
                Error::Overflow(o)
            }
            other => other,
        }
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Error::Overflow(_))
    }
}
