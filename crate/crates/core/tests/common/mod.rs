//! Shared fixtures for the integration tests: a synthetic embedding space,
//! a naive reference implementation, and property checks.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod checks;
pub mod naive;
pub mod props;
