//! Contextual ranking and selection over finite alternatives and contexts.
//!
//! Each alternative's reward over the context set is modeled by its own
//! Gaussian process. Sampling policies (GP-C-OCBA, C-OCBA, integrated
//! knowledge gradient, round robin) decide which alternative-context pair to
//! evaluate next; [`rate`] evaluates the large-deviations rate of false
//! selection and the optimal static allocation; [`harness`] runs replicated
//! experiments from a config file.

pub mod error;
pub mod model;
pub mod normal;
pub mod policy;
pub mod problem;
pub mod rate;
pub mod harness;

pub use error::{Error, Result};
