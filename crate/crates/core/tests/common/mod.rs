//! Checkers shared by the acceptance target and the integration tests.
#![allow(dead_code)]

pub mod codec;
pub mod fanout;
pub mod oracle;
pub mod race;
