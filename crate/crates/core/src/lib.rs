//! Graph-based network intrusion detection with edge-feature message
//! passing, minority-class Mixup augmentation, and a contrastive
//! auxiliary loss, plus the numeric kernels and CLI behind them.

pub mod augment;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod error;
pub mod flow;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
