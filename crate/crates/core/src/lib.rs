//! Day-ahead electrical load forecasting.
//!
//! A hybrid model runs an LSTM over the past week of hourly load (with
//! one-hot time encodings) and a small fully-connected network over
//! non-temporal features (weekly statistics, target-day calendar codes and
//! cosine similarity to K-means load patterns). Training perturbs the
//! embedding weights along the loss gradient; in deployment the output block
//! is fine-tuned weekly on recent data.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
