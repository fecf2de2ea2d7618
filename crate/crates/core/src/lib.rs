//! Inference of missing network structure and hidden initial states from
//! node time series.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{GinError, Result};
