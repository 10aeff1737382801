//! Experiment harness for `feedback-urns`: configuration, pipelines and
//! result records behind the `feedback-urns` command.

pub mod config;
pub mod experiments;
pub mod record;
