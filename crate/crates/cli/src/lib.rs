//! Scenario runner for the pfcontrol toolkit.

pub mod builtins;
pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;
