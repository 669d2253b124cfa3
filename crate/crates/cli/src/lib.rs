//! Configuration parsing and reporting for the `efield` command.

pub mod config;
pub mod summary;

pub use config::{parse_config, parse_config_str, parse_override, render_config, ConfigError};
pub use summary::{emit_summary, Summary};
