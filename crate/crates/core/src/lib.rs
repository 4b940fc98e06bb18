//! Evaluation harness for LLM-generated physics simulation code, and the
//! multi-agent self-correction loop that produces it.

pub mod benchdata;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod mediacheck;
pub mod profile;
pub mod promptkit;
pub mod reporting;
pub mod sandbox;
pub mod smrf;
pub mod stats;

/// Spearman correlation over `f64` scores.
pub type Correlation = stats::CorrelationReport<f64>;
