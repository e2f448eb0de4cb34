//! Push-based change notification with pull-based content transfer.

pub mod baseline;
pub mod broker;
pub mod changeset;
pub mod channel;
pub mod clock;
pub mod destination;
pub mod digest;
pub mod fetch;
pub mod harness;
pub mod notification;
pub mod resource;
pub mod source;
pub mod uri;
