//! Exact GP regression for one alternative over the finite context set.
//!
//! Repeated observations at the same context are collapsed into their
//! sample mean with noise variance `σ²/N`. The resulting posterior is
//! identical to conditioning on every raw observation, and a factorization
//! costs at most `O(|C|³)` regardless of how many samples were taken.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{ContextTable, KernelFamily, KernelSpec};
use crate::error::{Error, Result};

/// Number of times the jitter is doubled before giving up.
const JITTER_DOUBLINGS: u32 = 4;
const JITTER_BASE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Known observation variance per context index.
    Known(Vec<f64>),
    /// Single fitted variance for the whole alternative, on the standardized
    /// scale when standardization is on.
    Plugin(f64),
}

/// Running sufficient statistics of the observations at one context.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContextStats {
    pub count: usize,
    pub mean: f64,
    /// Sum of squared deviations from `mean`.
    pub m2: f64,
}

impl ContextStats {
    pub fn push(&mut self, y: f64) {
        self.count += 1;
        let delta = y - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (y - self.mean);
    }
}

/// Which parts of the posterior covariance to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Full,
    DiagonalOnly,
}

/// Posterior mean and covariance over every context.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Absent when fitted with [`CovarianceMode::DiagonalOnly`].
    pub covariance: Option<DMatrix<f64>>,
}

impl PosteriorSummary {
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }
}

/// Affine map between the raw and the standardized observation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Scaling {
    const IDENTITY: Scaling = Scaling {
        offset: 0.0,
        scale: 1.0,
    };
}

/// GP model for a single alternative.
#[derive(Debug, Clone)]
pub struct AlternativeGp {
    pub kernel: KernelSpec,
    /// Prior mean, on the standardized scale when `standardize` is set.
    pub prior_mean: f64,
    pub noise: NoiseModel,
    /// Standardize observations by their running mean and standard deviation
    /// before conditioning.
    pub standardize: bool,
    data: Vec<(usize, f64)>,
    stats: Vec<ContextStats>,
    posterior: Option<PosteriorSummary>,
}

impl AlternativeGp {
    pub fn new(
        kernel: KernelSpec,
        prior_mean: f64,
        noise: NoiseModel,
        standardize: bool,
        n_contexts: usize,
    ) -> Result<Self> {
        kernel.validate()?;
        match &noise {
            NoiseModel::Known(v) => {
                if v.len() != n_contexts {
                    return Err(Error::invalid(format!(
                        "known noise has {} entries for {n_contexts} contexts",
                        v.len()
                    )));
                }
                if v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::invalid("noise variances must be positive"));
                }
            }
            NoiseModel::Plugin(v) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid("plug-in noise variance must be positive"));
                }
            }
        }
        Ok(AlternativeGp {
            kernel,
            prior_mean,
            noise,
            standardize,
            data: Vec::new(),
            stats: vec![ContextStats::default(); n_contexts],
            posterior: None,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.stats.len()
    }

    pub fn observations(&self) -> &[(usize, f64)] {
        &self.data
    }

    pub fn context_stats(&self) -> &[ContextStats] {
        &self.stats
    }

    pub fn n_observations(&self) -> usize {
        self.data.len()
    }

    pub fn add_observation(&mut self, c: usize, y: f64) -> Result<()> {
        if c >= self.stats.len() {
            return Err(Error::invalid(format!("context index {c} out of range")));
        }
        self.data.push((c, y));
        self.stats[c].push(y);
        self.posterior = None;
        Ok(())
    }

    /// Replace the hyperparameters; drops the cached posterior.
    pub fn set_hyperparameters(&mut self, kernel: KernelSpec, noise: NoiseModel) {
        self.kernel = kernel;
        self.noise = noise;
        self.posterior = None;
    }

    /// Observation noise variance at context `c` on the raw scale.
    pub fn noise_variance(&self, c: usize) -> f64 {
        match &self.noise {
            NoiseModel::Known(v) => v[c],
            NoiseModel::Plugin(v) => {
                let s = self.scaling().scale;
                v * s * s
            }
        }
    }

    /// Noise variance at `c` on the standardized scale.
    pub(crate) fn noise_variance_std(&self, c: usize, scaling: Scaling) -> f64 {
        match &self.noise {
            NoiseModel::Known(v) => v[c] / (scaling.scale * scaling.scale),
            NoiseModel::Plugin(v) => *v,
        }
    }

    pub(crate) fn scaling(&self) -> Scaling {
        if !self.standardize {
            return Scaling::IDENTITY;
        }
        let n: usize = self.stats.iter().map(|s| s.count).sum();
        if n == 0 {
            return Scaling::IDENTITY;
        }
        let mean = self
            .stats
            .iter()
            .map(|s| s.count as f64 * s.mean)
            .sum::<f64>()
            / n as f64;
        if n < 2 {
            return Scaling {
                offset: mean,
                scale: 1.0,
            };
        }
        let ss: f64 = self
            .stats
            .iter()
            .map(|s| s.m2 + s.count as f64 * (s.mean - mean).powi(2))
            .sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
        Scaling {
            offset: mean,
            scale,
        }
    }

    /// Cached posterior, if one has been computed since the last change.
    pub fn cached_posterior(&self) -> Option<&PosteriorSummary> {
        self.posterior.as_ref()
    }

    /// Compute the posterior and store it in the cache.
    pub fn refit(&mut self, contexts: &ContextTable, mode: CovarianceMode) -> Result<&PosteriorSummary> {
        let post = self.fit_posterior_with(contexts, mode)?;
        Ok(self.posterior.insert(post))
    }

    /// Exact posterior mean and full covariance over all contexts.
    pub fn fit_posterior(&self, contexts: &ContextTable) -> Result<PosteriorSummary> {
        self.fit_posterior_with(contexts, CovarianceMode::Full)
    }

    pub fn fit_posterior_with(
        &self,
        contexts: &ContextTable,
        mode: CovarianceMode,
    ) -> Result<PosteriorSummary> {
        self.check_contexts(contexts)?;
        let scaling = self.scaling();
        let k_cc = self.kernel.gram(contexts)?;
        let observed = self.observed_contexts();
        let n_ctx = contexts.len();

        let (mut mean, mut variance, mut covariance) = if observed.is_empty() {
            let cov = k_cc.clone();
            (
                vec![self.prior_mean; n_ctx],
                k_cc.diagonal().iter().copied().collect::<Vec<_>>(),
                (mode == CovarianceMode::Full).then_some(cov),
            )
        } else if self.kernel.family == KernelFamily::Independent {
            // Conjugate per-context update; avoids the cancellation in
            // K - K A⁻¹ K when the prior variance dwarfs the noise.
            let mut mean = vec![self.prior_mean; n_ctx];
            let mut variance: Vec<f64> = k_cc.diagonal().iter().copied().collect();
            for &c in &observed {
                let theta = variance[c];
                let v = self.noise_variance_std(c, scaling) / self.stats[c].count as f64;
                let ybar = standardize(self.stats[c].mean, scaling);
                mean[c] = self.prior_mean + theta / (theta + v) * (ybar - self.prior_mean);
                variance[c] = theta * v / (theta + v);
            }
            let covariance = (mode == CovarianceMode::Full).then(|| DMatrix::from_diagonal(&DVector::from_vec(variance.clone())));
            (mean, variance, covariance)
        } else {
            let d = observed.len();
            let a = self.collapsed_system(&k_cc, &observed, scaling);
            let chol = factorize(a)?;
            let resid = DVector::from_iterator(
                d,
                observed
                    .iter()
                    .map(|&c| standardize(self.stats[c].mean, scaling) - self.prior_mean),
            );
            let alpha = chol.solve(&resid);
            // K(D, C)
            let k_dc = k_cc.select_rows(observed.iter());
            let mean: Vec<f64> = (0..n_ctx)
                .map(|c| self.prior_mean + k_dc.column(c).dot(&alpha))
                .collect();
            let mut v = k_dc;
            chol.l_dirty().solve_lower_triangular_mut(&mut v);
            let variance: Vec<f64> = (0..n_ctx)
                .map(|c| (k_cc[(c, c)] - v.column(c).norm_squared()).max(0.0))
                .collect();
            let covariance = match mode {
                CovarianceMode::Full => {
                    let mut cov = &k_cc - v.transpose() * &v;
                    for c in 0..n_ctx {
                        cov[(c, c)] = variance[c];
                    }
                    // exact symmetry
                    for i in 0..n_ctx {
                        for j in 0..i {
                            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                            cov[(i, j)] = s;
                            cov[(j, i)] = s;
                        }
                    }
                    Some(cov)
                }
                CovarianceMode::DiagonalOnly => None,
            };
            (mean, variance, covariance)
        };

        let s2 = scaling.scale * scaling.scale;
        for m in &mut mean {
            *m = scaling.offset + scaling.scale * *m;
        }
        for v in &mut variance {
            *v *= s2;
        }
        if let Some(cov) = covariance.as_mut() {
            *cov *= s2;
        }
        Ok(PosteriorSummary {
            mean,
            variance,
            covariance,
        })
    }

    /// Exact log marginal likelihood of all observations on the standardized
    /// scale, for the given hyperparameters.
    pub fn log_marginal_likelihood(
        &self,
        kernel: &KernelSpec,
        noise: &NoiseModel,
        contexts: &ContextTable,
    ) -> Result<f64> {
        self.check_contexts(contexts)?;
        let probe = AlternativeGp {
            kernel: kernel.clone(),
            prior_mean: self.prior_mean,
            noise: noise.clone(),
            standardize: self.standardize,
            data: Vec::new(),
            stats: self.stats.clone(),
            posterior: None,
        };
        probe.log_marginal_likelihood_current(contexts)
    }

    pub(crate) fn log_marginal_likelihood_current(&self, contexts: &ContextTable) -> Result<f64> {
        let observed = self.observed_contexts();
        if observed.is_empty() {
            return Ok(0.0);
        }
        let scaling = self.scaling();
        let k_cc = self.kernel.gram(contexts)?;
        let a = self.collapsed_system(&k_cc, &observed, scaling);
        let chol = factorize(a)?;
        let resid = DVector::from_iterator(
            observed.len(),
            observed
                .iter()
                .map(|&c| standardize(self.stats[c].mean, scaling) - self.prior_mean),
        );
        let mut z = resid;
        chol.l_dirty().solve_lower_triangular_mut(&mut z);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut ll = -0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * observed.len() as f64 * ln2pi;
        // Within-context terms that the collapsed likelihood of the means omits.
        let s2 = scaling.scale * scaling.scale;
        for &c in &observed {
            let st = &self.stats[c];
            let n = st.count as f64;
            let v = self.noise_variance_std(c, scaling);
            ll += -0.5 * (n - 1.0) * (ln2pi + v.ln()) - 0.5 * n.ln() - 0.5 * st.m2 / s2 / v;
        }
        Ok(ll)
    }

    /// Posterior mean computed by conditioning on one context's observations
    /// at a time, in the given order, with the rank-one update of the
    /// covariance after each context.
    pub fn sequential_posterior_mean(&self, contexts: &ContextTable, order: &[usize]) -> Result<Vec<f64>> {
        self.check_contexts(contexts)?;
        let n_ctx = contexts.len();
        let mut seen = vec![false; n_ctx];
        if order.len() != n_ctx || order.iter().any(|&c| c >= n_ctx || std::mem::replace(&mut seen[c], true)) {
            return Err(Error::invalid("order must be a permutation of the context indices"));
        }
        let scaling = self.scaling();
        let mut cov = self.kernel.gram(contexts)?;
        let mut mean = vec![self.prior_mean; n_ctx];
        for &ci in order {
            let st = self.stats[ci];
            if st.count == 0 {
                continue;
            }
            let n = st.count as f64;
            let ybar = standardize(st.mean, scaling);
            let denom = self.noise_variance_std(ci, scaling) + n * cov[(ci, ci)];
            let innov = ybar - mean[ci];
            let col: Vec<f64> = (0..n_ctx).map(|c| cov[(c, ci)]).collect();
            for c in 0..n_ctx {
                mean[c] += n * innov * col[c] / denom;
            }
            for i in 0..n_ctx {
                for j in 0..n_ctx {
                    cov[(i, j)] -= n * col[i] * col[j] / denom;
                }
            }
        }
        Ok(mean
            .into_iter()
            .map(|m| scaling.offset + scaling.scale * m)
            .collect())
    }

    fn check_contexts(&self, contexts: &ContextTable) -> Result<()> {
        if contexts.len() != self.stats.len() {
            return Err(Error::invalid(format!(
                "model has {} contexts, table has {}",
                self.stats.len(),
                contexts.len()
            )));
        }
        Ok(())
    }

    fn observed_contexts(&self) -> Vec<usize> {
        (0..self.stats.len()).filter(|&c| self.stats[c].count > 0).collect()
    }

    /// `K(D, D) + diag(σ²_c / N_c)` on the standardized scale.
    fn collapsed_system(&self, k_cc: &DMatrix<f64>, observed: &[usize], scaling: Scaling) -> DMatrix<f64> {
        let d = observed.len();
        DMatrix::from_fn(d, d, |i, j| {
            let (ci, cj) = (observed[i], observed[j]);
            let mut v = k_cc[(ci, cj)];
            if i == j {
                v += self.noise_variance_std(ci, scaling) / self.stats[ci].count as f64;
            }
            v
        })
    }
}

fn standardize(y: f64, s: Scaling) -> f64 {
    (y - s.offset) / s.scale
}

/// Cholesky with escalating diagonal jitter on failure.
pub(crate) fn factorize(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol);
    }
    let mean_diag = a.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_BASE * mean_diag;
    for attempt in 0..=JITTER_DOUBLINGS {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(b) {
            log::debug!("cholesky succeeded with jitter {jitter:e}");
            return Ok(chol);
        }
        if attempt < JITTER_DOUBLINGS {
            jitter *= 2.0;
        }
    }
    Err(Error::NumericalFailure { jitter })
}
