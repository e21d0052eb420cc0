use crate::units::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at t = {t:e} s (m = {m})")]
    Integration { t: f64, m: Vec3 },

    #[error("no oscillation detected: {0}")]
    NoOscillation(String),

    #[error("channel {channel}: {reason}")]
    Planning { channel: usize, reason: String },

    #[error("calibration failed: {reason}; trace: {trace:?}")]
    Calibration {
        reason: String,
        /// (bias in A, measured frequency in Hz) for every evaluated point.
        trace: Vec<(f64, f64)>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("channel {channel}: {source}")]
    Channel {
        channel: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_channel(self, channel: usize) -> Self {
        Error::Channel {
            channel,
            source: Box::new(self),
        }
    }
}
