//! Building blocks for on-demand information extraction: markdown tables,
//! instance datasets, LLM access, data synthesis, quality filtering,
//! evaluation metrics, agreement statistics and training-format export.

pub mod dataset;
pub mod eval;
pub mod filter;
pub mod formatter;
pub mod gateway;
pub mod scorer_client;
pub mod stats;
pub mod synthesis;
pub mod table;
pub mod util;
