//! Integrated knowledge gradient over the context set.

use super::{AllocationState, Diagnostics, PolicyDecision};
use crate::error::{Error, Result};
use crate::model::PosteriorSummary;
use crate::normal;

/// Expected one-step improvement `E[max(a, b + sZ)] − max(a, b)` for
/// `Z ~ N(0, 1)`.
///
/// With independent per-alternative models a sample at `(k, c)` moves only
/// alternative `k`'s mean at `c'`, so the usual piecewise-linear epigraph
/// reduces to one sloped line against the constant `a`.
pub fn kg_single(a: f64, b: f64, s: f64) -> Result<f64> {
    if s.is_nan() || s < 0.0 {
        return Err(Error::invalid(format!("KG slope must be nonnegative, got {s}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let z = (a - b).abs() / s;
    // φ(z) − z Φ(−z), written with the complementary tail to avoid cancellation
    let v = s * (normal::pdf(z) - z * normal::cdf(-z));
    Ok(v.max(0.0))
}

/// One IKG decision. `noise_variance[k][c]` is the observation variance
/// the model assumes at each pair; `posteriors` must carry full covariances.
pub fn ikg_step(
    posteriors: &[PosteriorSummary],
    weights: &[f64],
    noise_variance: &[Vec<f64>],
    state: &AllocationState,
) -> Result<PolicyDecision> {
    let nk = posteriors.len();
    let nc = weights.len();
    if nk < 2 {
        return Err(Error::invalid("IKG needs at least two alternatives"));
    }
    if state.n_alternatives() != nk || state.n_contexts() != nc {
        return Err(Error::invalid("allocation state does not match the posteriors"));
    }
    let covs = posteriors
        .iter()
        .map(|p| {
            p.covariance()
                .ok_or_else(|| Error::invalid("IKG needs full posterior covariances"))
        })
        .collect::<Result<Vec<_>>>()?;

    // top two means per context so max over k' ≠ k is O(1)
    let mut top: Vec<(usize, f64, f64)> = Vec::with_capacity(nc);
    for c in 0..nc {
        let (mut i1, mut m1, mut m2) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (k, p) in posteriors.iter().enumerate() {
            let m = p.mean[c];
            if m > m1 {
                m2 = m1;
                m1 = m;
                i1 = k;
            } else if m > m2 {
                m2 = m;
            }
        }
        top.push((i1, m1, m2));
    }

    let mut table = vec![0.0; nk * nc];
    let mut arg = (0, 0, f64::NEG_INFINITY);
    for k in 0..nk {
        let cov = covs[k];
        for c in 0..nc {
            let denom = posteriors[k].variance[c] + noise_variance[k][c];
            if !(denom > 0.0) {
                return Err(Error::invalid(format!("nonpositive predictive variance at ({k}, {c})")));
            }
            let sd = denom.sqrt();
            let mut v = 0.0;
            for (cp, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (i1, m1, m2) = top[cp];
                let a = if i1 == k { m2 } else { m1 };
                let s = cov[(cp, c)].abs() / sd;
                v += w * kg_single(a, posteriors[k].mean[cp], s)?;
            }
            table[k * nc + c] = v;
            if v > arg.2 {
                arg = (k, c, v);
            }
        }
    }
    Ok(PolicyDecision {
        pair: (arg.0, arg.1),
        diagnostics: Diagnostics::Ikg {
            table,
            ikg_max: arg.2,
        },
    })
}
