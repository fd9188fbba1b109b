//! GP-C-OCBA and its sample-moment counterpart C-OCBA.

use super::{AllocationState, Diagnostics, PolicyDecision};
use crate::error::{Error, Result};
use crate::model::{IndependentModel, PosteriorSummary};
use crate::problem::argmax;

/// Posterior variances are clamped below at this value inside ζ and ψ.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Mean and variance estimates over all pairs, `[k][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateGrid {
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
}

impl EstimateGrid {
    pub fn from_posteriors(posteriors: &[PosteriorSummary]) -> Self {
        EstimateGrid {
            mean: posteriors.iter().map(|p| p.mean.clone()).collect(),
            variance: posteriors.iter().map(|p| p.variance.clone()).collect(),
        }
    }

    /// Sample means and `s²/N` from the independent model.
    pub fn from_independent(model: &IndependentModel) -> Result<Self> {
        let (nk, nc) = (model.n_alternatives(), model.n_contexts());
        let mut mean = vec![vec![0.0; nc]; nk];
        let mut variance = vec![vec![0.0; nc]; nk];
        for k in 0..nk {
            for c in 0..nc {
                let p = model.get(k, c);
                let s2 = p.variance().ok_or_else(|| {
                    Error::InsufficientData(format!("pair ({k}, {c}) has {} samples; C-OCBA needs 2", p.count))
                })?;
                mean[k][c] = p.mean;
                variance[k][c] = s2 / p.count as f64;
            }
        }
        Ok(EstimateGrid { mean, variance })
    }

    pub fn n_alternatives(&self) -> usize {
        self.mean.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    /// Predicted best alternative per context, lowest index on ties.
    pub fn selected(&self) -> Vec<usize> {
        (0..self.n_contexts())
            .map(|c| argmax(self.mean.iter().map(|row| row[c])))
            .collect()
    }
}

/// One GP-C-OCBA decision from the per-alternative posteriors.
pub fn gpc_ocba_step(posteriors: &[PosteriorSummary], state: &AllocationState) -> Result<PolicyDecision> {
    ocba_decide(&EstimateGrid::from_posteriors(posteriors), state)
}

/// One C-OCBA decision: GP-C-OCBA with sample means and `s²/N`.
pub fn c_ocba_step(model: &IndependentModel, state: &AllocationState) -> Result<PolicyDecision> {
    ocba_decide(&EstimateGrid::from_independent(model)?, state)
}

/// The shared OCBA rule: find the challenger pair with the smallest
/// standardized gap ζ, then sample either that context's incumbent best or
/// the challenger depending on the ψ balance test (ties go to the challenger).
pub fn ocba_decide(est: &EstimateGrid, state: &AllocationState) -> Result<PolicyDecision> {
    let (nk, nc) = (est.n_alternatives(), est.n_contexts());
    if nk < 2 || nc == 0 {
        return Err(Error::invalid("OCBA needs at least two alternatives and one context"));
    }
    if state.n_alternatives() != nk || state.n_contexts() != nc {
        return Err(Error::invalid("allocation state does not match the estimates"));
    }
    let best = est.selected();
    let var = |k: usize, c: usize| est.variance[k][c].max(VARIANCE_FLOOR);

    let mut zeta = vec![f64::NAN; nk * nc];
    let mut arg: Option<(usize, usize, f64)> = None;
    for k in 0..nk {
        for c in 0..nc {
            let b = best[c];
            if k == b {
                continue;
            }
            let gap = est.mean[b][c] - est.mean[k][c];
            let z = gap * gap / (var(b, c) + var(k, c));
            zeta[k * nc + c] = z;
            if arg.is_none_or(|(_, _, zmin)| z < zmin) {
                arg = Some((k, c, z));
            }
        }
    }
    let (k_star, c_star, zeta_min) = arg.expect("at least one challenger");
    let b = best[c_star];
    let p_hat = state.context_fractions(c_star);
    let psi1 = p_hat[b] / var(b, c_star);
    let psi2: f64 = (0..nk).filter(|&k| k != b).map(|k| p_hat[k] / var(k, c_star)).sum();
    let pair = if psi1 < psi2 { (b, c_star) } else { (k_star, c_star) };
    Ok(PolicyDecision {
        pair,
        diagnostics: Diagnostics::Ocba {
            zeta,
            zeta_min,
            psi1,
            psi2,
        },
    })
}
