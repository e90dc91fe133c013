//! Query-item mismatch classification with generated hard positives.

pub mod classifier;
pub mod config;
pub mod dssm;
pub mod e2e;
pub mod error;
pub mod gradsuite;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod text;
pub mod train;
pub mod ved;

pub use error::{QuartsError, Result};
