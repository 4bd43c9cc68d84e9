//! Pipelines behind the `salf` command-line tool.

pub mod bench;
pub mod pipeline;
