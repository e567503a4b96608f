//! Experiment runner for the two-way relay models: figure presets, sweeps,
//! simulation, stability regions and a three-way verification suite.

pub mod args;
pub mod config;
pub mod csv;
pub mod presets;
pub mod run;
