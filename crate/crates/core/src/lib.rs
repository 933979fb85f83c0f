//! Statistical machinery for test-set replication studies.
//!
//! The crate covers exact binomial intervals and the probit transform
//! ([`stats`]), linear and probit-domain fits with bootstrap bands
//! ([`regression`]), the Gaussian difficulty model ([`difficulty`]),
//! selection-frequency sampling strategies ([`sampling`]), near-duplicate
//! candidate generation ([`dedup`]), table-level analyses ([`testbed`]), and
//! the file formats that tie them together ([`io`]).

pub mod dedup;
pub mod difficulty;
pub mod error;
pub mod io;
pub mod regression;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
