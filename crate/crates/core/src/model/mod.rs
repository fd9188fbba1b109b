//! Per-alternative reward models: exact GP regression over the context set
//! and the independent sample-moment model.

mod gp;
mod hyper;
mod independent;
mod kernel;

pub use gp::{AlternativeGp, ContextStats, CovarianceMode, NoiseModel, PosteriorSummary};
pub use hyper::{fit_hyperparameters, FittedHyperparameters, HyperFitOptions};
pub use independent::{IndependentModel, PairMoments};
pub use kernel::{ContextTable, KernelFamily, KernelSpec};
