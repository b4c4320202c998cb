//! Library side of the `dqtrack` binary: config plumbing and the CSV
//! artifact formats, exposed so integration tests can parse what the
//! binary writes.

pub mod config;
pub mod csvio;
