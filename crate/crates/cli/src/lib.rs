//! Experiment harness for hierarchical contrastive learning: configuration,
//! sweep execution, presets, and plot output.

pub mod config;
pub mod plot;
pub mod presets;
pub mod sweep;
