//! Scenario files, orchestration and report emission for `obslab-core`.

pub mod config;
pub mod plot;
pub mod runner;
