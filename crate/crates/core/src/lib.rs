//! Refinement learning for multi-label classification: learning fine-grained
//! label classifiers from coarse labels plus a small fully annotated warm-up
//! set, by learning pseudo-labels for the unknown fine-grained entries, and
//! actively querying the most informative unknown entries.

pub mod active;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hierarchy;
pub mod io;
pub mod learners;
pub mod model;

pub use error::{Error, Result};
