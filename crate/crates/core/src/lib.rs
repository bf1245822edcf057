//! Aggressive-driving detection from 1 Hz GPS trips.
//!
//! The pipeline runs raw trip files through feature assembly, sliding
//! windows and normalization into stacked GRU/LSTM binary classifiers
//! trained with hand-derived backpropagation through time.

pub mod bench;
pub mod error;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod rnn;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;
