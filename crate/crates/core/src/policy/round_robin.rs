use super::{AllocationState, Diagnostics, PolicyDecision};

/// Least-sampled pair, lowest `(k, c)` first. From a balanced state this
/// cycles through the pairs in lexicographic order.
pub fn round_robin_step(state: &AllocationState) -> PolicyDecision {
    let mut pair = (0, 0);
    let mut min = usize::MAX;
    for k in 0..state.n_alternatives() {
        for c in 0..state.n_contexts() {
            let n = state.count(k, c);
            if n < min {
                min = n;
                pair = (k, c);
            }
        }
    }
    PolicyDecision {
        pair,
        diagnostics: Diagnostics::None,
    }
}
