//! Scenario runner for `finsler-vortex`: reads a JSON scenario, runs one task
//! and writes CSV artifacts plus a `summary.json` into an output directory.

pub mod cli;
pub mod output;
pub mod scenario;
pub mod tasks;
