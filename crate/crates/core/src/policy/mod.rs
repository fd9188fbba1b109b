//! Sequential sampling policies.

mod kg;
mod ocba;
mod round_robin;
mod run;
mod state;

pub use kg::{ikg_step, kg_single};
pub use ocba::{c_ocba_step, gpc_ocba_step, ocba_decide, EstimateGrid, VARIANCE_FLOOR};
pub use round_robin::round_robin_step;
pub use run::{
    run_policy, run_policy_observed, DiagnosticRow, GpSettings, InitRule, ModelKind, NoiseMode, PolicyKind,
    RunConfig, SelectionRecord, StepView, Trajectory,
};
pub use state::AllocationState;

/// Policy-specific scores behind a decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostics {
    None,
    Ocba {
        /// ζ(k, c), flattened `k`-major; NaN at each context's predicted best.
        zeta: Vec<f64>,
        zeta_min: f64,
        psi1: f64,
        psi2: f64,
    },
    Ikg {
        /// IKG(k, c), flattened `k`-major.
        table: Vec<f64>,
        ikg_max: f64,
    },
}

/// The pair to sample next, `(alternative, context)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub pair: (usize, usize),
    pub diagnostics: Diagnostics,
}
