//! Double-precision reference implementations used as test oracles.
//!
//! Everything here is written from the definitions, in the most direct form,
//! with no dependency on the crates under test. Shape errors panic.

pub mod boxes;
pub mod metrics;
pub mod nn;
pub mod prune;
