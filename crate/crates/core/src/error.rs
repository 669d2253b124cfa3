use thiserror::Error;

/// Errors raised anywhere in the acquisition, control, or transport chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("input domain error: {0}")]
    InputDomain(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The first byte of a frame is not the sync marker.
    #[error("framing error: expected sync byte 0xA5, found {found:#04x}")]
    Framing { found: u8 },

    /// A frame's CRC does not match its contents.
    #[error("integrity error: crc {computed:#06x} does not match transmitted {received:#06x}")]
    Integrity { computed: u16, received: u16 },

    /// A frame has the wrong length.
    #[error("frame length {0}, expected 36")]
    FrameLength(usize),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
