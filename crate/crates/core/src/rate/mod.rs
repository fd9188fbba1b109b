//! Large-deviations rate of false selection under a static allocation, the
//! optimal allocation that maximizes it, and diagnostics for comparing run
//! traces against it.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::problem::{argmax, fmt_sig17};

/// Relative tolerance the solver's balance root-finding aims for.
const SOLVER_TOL: f64 = 1e-13;
const MAX_BISECTIONS: usize = 200;
/// Residual threshold for a certified solution.
const CERTIFY_RESIDUAL: f64 = 1e-6;
/// Fraction of a coordinate moved in the local-optimality check.
const CERTIFY_STEP: f64 = 1e-4;

/// Means and noise variances of a contextual problem, `[k][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProblem {
    truth: Vec<Vec<f64>>,
    noise_var: Vec<Vec<f64>>,
    best: Vec<usize>,
}

impl RateProblem {
    pub fn new(truth: Vec<Vec<f64>>, noise_var: Vec<Vec<f64>>) -> Result<Self> {
        if truth.len() < 2 {
            return Err(Error::invalid("need at least two alternatives"));
        }
        let nc = truth[0].len();
        if nc == 0 {
            return Err(Error::invalid("need at least one context"));
        }
        if truth.iter().any(|r| r.len() != nc) || noise_var.len() != truth.len() || noise_var.iter().any(|r| r.len() != nc)
        {
            return Err(Error::invalid("truth and noise variance must share a K x |C| shape"));
        }
        if truth.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("truth must be finite"));
        }
        if noise_var.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        let mut best = Vec::with_capacity(nc);
        for c in 0..nc {
            let b = argmax(truth.iter().map(|r| r[c]));
            if truth.iter().enumerate().any(|(k, r)| k != b && r[c] == truth[b][c]) {
                return Err(Error::invalid(format!("context {c} has tied best alternatives")));
            }
            best.push(b);
        }
        Ok(RateProblem { truth, noise_var, best })
    }

    pub fn n_alternatives(&self) -> usize {
        self.truth.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.truth[0].len()
    }

    pub fn best(&self) -> &[usize] {
        &self.best
    }

    pub fn truth(&self) -> &[Vec<f64>] {
        &self.truth
    }

    pub fn noise_var(&self) -> &[Vec<f64>] {
        &self.noise_var
    }

    fn check_shape(&self, p: &[Vec<f64>]) -> Result<()> {
        if p.len() != self.n_alternatives() || p.iter().any(|r| r.len() != self.n_contexts()) {
            return Err(Error::invalid("allocation shape does not match the problem"));
        }
        Ok(())
    }

    /// Pairwise exponent `η(k, c) = gap² / (σ_b²/p_b + σ_k²/p_k)`, twice the
    /// rate function. Zero allocations give 0.
    fn eta(&self, p: &[Vec<f64>], k: usize, c: usize) -> f64 {
        let b = self.best[c];
        let gap = self.truth[b][c] - self.truth[k][c];
        if p[b][c] <= 0.0 || p[k][c] <= 0.0 {
            return 0.0;
        }
        gap * gap / (self.noise_var[b][c] / p[b][c] + self.noise_var[k][c] / p[k][c])
    }

    /// Rate function `G(k, c)` of the pair under allocation `p`.
    pub fn rate_value(&self, p: &[Vec<f64>], k: usize, c: usize) -> Result<f64> {
        self.check_shape(p)?;
        if c >= self.n_contexts() || k >= self.n_alternatives() {
            return Err(Error::invalid(format!("pair ({k}, {c}) out of range")));
        }
        let b = self.best[c];
        if k == b {
            return Err(Error::invalid(format!("alternative {k} is the best at context {c}")));
        }
        if !(p[b][c] > 0.0 && p[k][c] > 0.0) {
            return Err(Error::invalid(format!("zero allocation at context {c}")));
        }
        Ok(0.5 * self.eta(p, k, c))
    }

    /// Smallest rate over all non-best pairs, with the lexicographically
    /// first minimizer.
    pub fn overall_rate(&self, p: &[Vec<f64>]) -> Result<(f64, (usize, usize))> {
        let mut out = (f64::INFINITY, (0, 0));
        for k in 0..self.n_alternatives() {
            for c in 0..self.n_contexts() {
                if k == self.best[c] {
                    continue;
                }
                let g = self.rate_value(p, k, c)?;
                if g < out.0 {
                    out = (g, (k, c));
                }
            }
        }
        Ok(out)
    }

    /// `min G` without validation; 0 whenever a referenced entry is zero.
    pub fn min_rate_unchecked(&self, p: &[Vec<f64>]) -> f64 {
        let mut m = f64::INFINITY;
        for k in 0..self.n_alternatives() {
            for c in 0..self.n_contexts() {
                if k != self.best[c] {
                    m = m.min(0.5 * self.eta(p, k, c));
                }
            }
        }
        m
    }

    /// Residuals of the optimality conditions for `p` (any positive scaling).
    pub fn allocation_residuals(&self, p: &[Vec<f64>]) -> Result<AllocationResiduals> {
        self.check_shape(p)?;
        let (nk, nc) = (self.n_alternatives(), self.n_contexts());
        let mut balance = vec![0.0; nc];
        let mut within = vec![0.0; nc];
        let mut context_eta = vec![0.0; nc];
        let mut all_eta = Vec::new();
        let mut degenerate = false;
        for c in 0..nc {
            let b = self.best[c];
            let lhs = p[b][c] * p[b][c] / self.noise_var[b][c];
            let rhs: f64 = (0..nk)
                .filter(|&k| k != b)
                .map(|k| p[k][c] * p[k][c] / self.noise_var[k][c])
                .sum();
            let zero = (0..nk).any(|k| !(p[k][c] > 0.0));
            if zero {
                balance[c] = f64::INFINITY;
                within[c] = f64::INFINITY;
                degenerate = true;
                continue;
            }
            balance[c] = (lhs - rhs).abs() / lhs.max(rhs);
            let etas: Vec<f64> = (0..nk).filter(|&k| k != b).map(|k| self.eta(p, k, c)).collect();
            let (lo, hi) = min_max(&etas);
            within[c] = hi - lo;
            context_eta[c] = etas.iter().sum::<f64>() / etas.len() as f64;
            all_eta.extend(etas);
        }
        let across = if degenerate {
            f64::INFINITY
        } else {
            let mean = all_eta.iter().sum::<f64>() / all_eta.len() as f64;
            for w in &mut within {
                *w /= mean;
            }
            let (lo, hi) = min_max(&context_eta);
            (hi - lo) / mean
        };
        Ok(AllocationResiduals { balance, within, across })
    }

    /// Allocation maximizing the smallest rate over the simplex of all
    /// pairs.
    pub fn solve_optimal_allocation(&self) -> Result<RateReport> {
        let (nk, nc) = (self.n_alternatives(), self.n_contexts());
        // Rates are homogeneous of degree one in p, so solve with every
        // pairwise η pinned to 1 and rescale onto the simplex afterwards.
        let mut p = vec![vec![0.0; nc]; nk];
        let mut converged = true;
        for c in 0..nc {
            let (pb, ok) = self.solve_context(c, &mut p);
            converged &= ok;
            p[self.best[c]][c] = pb;
        }
        let total: f64 = p.iter().flatten().sum();
        for v in p.iter_mut().flatten() {
            *v /= total;
        }
        self.report(p, converged)
    }

    /// Per-context solve with η fixed at 1. Writes challenger allocations
    /// into `p` and returns the best's allocation.
    fn solve_context(&self, c: usize, p: &mut [Vec<f64>]) -> (f64, bool) {
        let b = self.best[c];
        let sb = self.noise_var[b][c];
        let challengers: Vec<usize> = (0..self.n_alternatives()).filter(|&k| k != b).collect();
        let gap2 = |k: usize| (self.truth[b][c] - self.truth[k][c]).powi(2);
        let min_gap2 = challengers.iter().map(|&k| gap2(k)).fold(f64::INFINITY, f64::min);
        // p_k(p_b) is finite only above this threshold
        let threshold = sb / min_gap2;
        let challenger_alloc = |pb: f64, k: usize| self.noise_var[k][c] / (gap2(k) - sb / pb);
        let excess = |pb: f64| {
            pb * pb / sb
                - challengers
                    .iter()
                    .map(|&k| {
                        let pk = challenger_alloc(pb, k);
                        pk * pk / self.noise_var[k][c]
                    })
                    .sum::<f64>()
        };
        let mut lo = threshold;
        let mut hi = 2.0 * threshold;
        while excess(hi) <= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut converged = false;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= SOLVER_TOL * hi {
                converged = true;
                break;
            }
        }
        let pb = 0.5 * (lo + hi);
        for &k in &challengers {
            p[k][c] = challenger_alloc(pb, k);
        }
        (pb, converged)
    }

    /// Build the report for an allocation on the simplex.
    pub fn report(&self, p: Vec<Vec<f64>>, converged: bool) -> Result<RateReport> {
        let (nk, nc) = (self.n_alternatives(), self.n_contexts());
        let mut g = vec![vec![f64::NAN; nc]; nk];
        for (k, row) in g.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if k != self.best[c] {
                    *v = self.rate_value(&p, k, c)?;
                }
            }
        }
        let (g_min, argmin) = self.overall_rate(&p)?;
        let residuals = self.allocation_residuals(&p)?;
        let certified = converged && residuals.max() < CERTIFY_RESIDUAL && self.is_locally_optimal(&p, g_min);
        Ok(RateReport {
            best: self.best.clone(),
            allocation: p,
            g,
            g_min,
            argmin,
            residuals,
            certified,
        })
    }

    /// No transfer of a small fraction of one coordinate to another raises
    /// the minimum rate. The objective is concave, so this certifies a
    /// global maximum.
    fn is_locally_optimal(&self, p: &[Vec<f64>], g_min: f64) -> bool {
        let flat: Vec<(usize, usize)> = (0..self.n_alternatives())
            .flat_map(|k| (0..self.n_contexts()).map(move |c| (k, c)))
            .collect();
        let mut q = p.to_vec();
        for &(ki, ci) in &flat {
            for &(kj, cj) in &flat {
                if (ki, ci) == (kj, cj) {
                    continue;
                }
                let delta = CERTIFY_STEP * p[ki][ci];
                q[ki][ci] -= delta;
                q[kj][cj] += delta;
                let g = self.min_rate_unchecked(&q);
                q[ki][ci] = p[ki][ci];
                q[kj][cj] = p[kj][cj];
                if g > g_min * (1.0 + 1e-12) {
                    return false;
                }
            }
        }
        true
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Residuals of the three optimality condition families.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResiduals {
    /// Per context, `|p_b²/σ_b² − Σ p_k²/σ_k²|` over the larger side.
    pub balance: Vec<f64>,
    /// Per context, the spread of η over challengers divided by the mean η.
    pub within: Vec<f64>,
    /// Spread of the per-context mean η divided by the mean η.
    pub across: f64,
}

impl AllocationResiduals {
    pub fn max(&self) -> f64 {
        self.balance
            .iter()
            .chain(&self.within)
            .copied()
            .fold(self.across, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub best: Vec<usize>,
    /// Allocation over all pairs, `[k][c]`, summing to 1.
    pub allocation: Vec<Vec<f64>>,
    /// `G(k, c)`; NaN at each context's best.
    pub g: Vec<Vec<f64>>,
    pub g_min: f64,
    pub argmin: (usize, usize),
    pub residuals: AllocationResiduals,
    pub certified: bool,
}

impl RateReport {
    /// Exponent `η*` with `PFS ≐ exp(−η* n / 2)`.
    pub fn eta_star(&self) -> f64 {
        2.0 * self.g_min
    }

    /// Predicted slope of log PFS against the sample count.
    pub fn predicted_log_pfs_slope(&self) -> f64 {
        -self.eta_star() / 2.0
    }

    /// Share of the budget each context receives.
    pub fn context_mass(&self) -> Vec<f64> {
        let nc = self.allocation[0].len();
        (0..nc).map(|c| self.allocation.iter().map(|r| r[c]).sum()).collect()
    }

    /// Allocation normalized within context `c`.
    pub fn context_allocation(&self, c: usize) -> Vec<f64> {
        let mass = self.context_mass()[c];
        self.allocation.iter().map(|r| r[c] / mass).collect()
    }

    pub fn to_csv(&self) -> String {
        let mass = self.context_mass();
        let mut s = String::from("k,c,is_best,p_star,p_star_in_context,g\n");
        for (k, row) in self.allocation.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                let g = if self.best[c] == k { String::new() } else { fmt_sig17(self.g[k][c]) };
                let _ = writeln!(
                    s,
                    "{k},{c},{},{},{},{g}",
                    u8::from(self.best[c] == k),
                    fmt_sig17(p),
                    fmt_sig17(p / mass[c])
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "optimal allocation ({} contexts)", self.best.len());
        let _ = writeln!(s, "  min rate G*        {:.10e}", self.g_min);
        let _ = writeln!(s, "  eta*               {:.10e}", self.eta_star());
        let _ = writeln!(s, "  log-PFS slope      {:.10e}", self.predicted_log_pfs_slope());
        let _ = writeln!(s, "  binding pair       k={} c={}", self.argmin.0, self.argmin.1);
        let _ = writeln!(s, "  max residual       {:.3e}", self.residuals.max());
        let _ = writeln!(s, "  certified          {}", self.certified);
        for (c, m) in self.context_mass().iter().enumerate() {
            let _ = writeln!(s, "  context {c}: mass {m:.6}, best {}", self.best[c]);
        }
        s
    }
}

/// Least-squares line through `(n, log PFS)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// `−η*/2` when supplied.
    pub predicted: Option<f64>,
}

impl SlopeFit {
    /// `|slope − predicted| / |predicted|`.
    pub fn relative_error(&self) -> Option<f64> {
        self.predicted.map(|p| (self.slope - p).abs() / p.abs())
    }
}

/// Fit the exponential decay rate of an empirical PFS curve. Points with PFS
/// outside (0, 1) are dropped.
pub fn pfs_slope_fit(curve: &[(f64, f64)], eta_star: Option<f64>) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|&&(n, p)| n.is_finite() && p > 0.0 && p < 1.0)
        .map(|&(n, p)| (n, p.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} usable PFS points; need 5",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("PFS points share a single n".into()));
    }
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: ybar - slope * xbar,
        points_used: pts.len(),
        predicted: eta_star.map(|e| -e / 2.0),
    })
}
