//! Experiment orchestration for learned multi-step samplers: config loading, the
//! experiment families, embedded acceptance checks, and CSV/JSON/SVG reports.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;

pub use config::{load_config, Command, ExperimentConfig, Overrides};
pub use experiments::run;
pub use report::{emit_report, Check, RunReport};
