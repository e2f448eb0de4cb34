//! Content transfer: dereferencing a URI at the Source.

use thiserror::Error;

use crate::resource::ResourceVersion;
use crate::uri::NormalizedUri;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("{0} was never published")]
    NotFound(NormalizedUri),
    #[error("{0} has been deleted")]
    Gone(NormalizedUri),
    /// Transient failure; worth retrying.
    #[error("source unavailable: {0}")]
    Unavailable(String),
}

pub trait ResourceFetcher: Send + Sync {
    /// Returns the latest version at call time.
    fn fetch(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError>;
}

impl<F: ResourceFetcher + ?Sized> ResourceFetcher for std::sync::Arc<F> {
    fn fetch(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError> {
        (**self).fetch(uri)
    }
}
