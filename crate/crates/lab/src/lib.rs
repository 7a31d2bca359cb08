//! Experiment harness around the `magnituder` core: procedural scenes,
//! metrics, file formats, configuration, and the experiment drivers.

pub mod config;
pub mod encoding;
pub mod experiments;
pub mod formats;
pub mod metrics;
pub mod results;
pub mod scenes;
