//! Elastic multi-branch inference with resource-aware variant selection.

pub mod adaptation;
pub mod data;
pub mod elastic;
pub mod error;
pub mod kv;
pub mod monitor;
pub mod perf_index;
pub mod profiler;
pub mod tinynn;
pub mod train;

pub use error::{Error, Result};
