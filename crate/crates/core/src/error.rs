use thiserror::Error;

use crate::{ContentId, PeerId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),

    #[error("query for unknown content {0}")]
    UnknownContent(ContentId),

    #[error("no live peer hosts content {0}")]
    Routing(ContentId),

    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
