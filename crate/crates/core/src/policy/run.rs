//! The sequential loop shared by every policy: initialize, then repeatedly
//! refit, decide, observe, and update until the budget is spent.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ikg_step, EstimateGrid, ocba_decide, round_robin_step, AllocationState, Diagnostics,
    PolicyDecision,
};
use crate::error::{Error, Result};
use crate::model::{
    fit_hyperparameters, AlternativeGp, CovarianceMode, HyperFitOptions, IndependentModel, KernelFamily,
    KernelSpec, NoiseModel, PosteriorSummary,
};
use crate::problem::ContextualProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    GpCOcba,
    COcba,
    Ikg,
    RoundRobin,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gp-c-ocba" | "gpcocba" | "gp_c_ocba" => Ok(PolicyKind::GpCOcba),
            "c-ocba" | "cocba" | "c_ocba" => Ok(PolicyKind::COcba),
            "ikg" => Ok(PolicyKind::Ikg),
            "round-robin" | "roundrobin" | "round_robin" | "rr" => Ok(PolicyKind::RoundRobin),
            other => Err(Error::invalid(format!("unknown policy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::GpCOcba => "gp-c-ocba",
            PolicyKind::COcba => "c-ocba",
            PolicyKind::Ikg => "ikg",
            PolicyKind::RoundRobin => "round-robin",
        }
    }
}

/// Statistical model a policy predicts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gp,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitRule {
    /// `m` samples at every pair.
    PerPair(usize),
    /// For every alternative, `m` samples at each of `contexts` distinct
    /// contexts drawn uniformly at random.
    PerAltRandom { contexts: usize, samples: usize },
}

impl InitRule {
    /// Initial sample count `N₀`.
    pub fn initial_samples(&self, n_alternatives: usize, n_contexts: usize) -> usize {
        match *self {
            InitRule::PerPair(m) => m * n_alternatives * n_contexts,
            InitRule::PerAltRandom { contexts, samples } => n_alternatives * contexts.min(n_contexts) * samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    /// Use the problem's noise variances.
    Known,
    /// Fit one variance per alternative, starting from this value on the
    /// standardized scale.
    Plugin(f64),
}

/// GP construction and retraining settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSettings {
    pub family: KernelFamily,
    /// Fixed starting hyperparameters; when `None` the output scale is 1 and
    /// every length scale is the median pairwise context distance.
    pub kernel: Option<KernelSpec>,
    pub noise: NoiseMode,
    pub standardize: bool,
    pub prior_mean: f64,
    pub hyper: HyperFitOptions,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            family: KernelFamily::Matern52,
            kernel: None,
            noise: NoiseMode::Known,
            standardize: true,
            prior_mean: 0.0,
            hyper: HyperFitOptions::default(),
        }
    }
}

impl GpSettings {
    /// Frozen diagonal prior with the given variance and known noise, no
    /// standardization.
    pub fn uninformative(prior_variance: f64, context_dim: usize) -> Result<Self> {
        Ok(GpSettings {
            family: KernelFamily::Independent,
            kernel: Some(KernelSpec::independent(prior_variance, context_dim)?),
            noise: NoiseMode::Known,
            standardize: false,
            prior_mean: 0.0,
            hyper: HyperFitOptions::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyKind,
    /// Total budget `B`, including the initial samples.
    pub budget: usize,
    pub init: InitRule,
    /// Retrain hyperparameters every this many iterations; 0 freezes them.
    pub retrain_every: usize,
    pub gp: GpSettings,
    /// Predictor for round robin (the other policies fix their own).
    pub round_robin_model: ModelKind,
    /// Record the selected map every this many post-initialization iterations.
    pub record_stride: usize,
    pub keep_diagnostics: bool,
}

impl RunConfig {
    pub fn new(policy: PolicyKind, budget: usize, init: InitRule) -> Self {
        RunConfig {
            policy,
            budget,
            init,
            retrain_every: 10,
            gp: GpSettings::default(),
            round_robin_model: ModelKind::Gp,
            record_stride: 1,
            keep_diagnostics: false,
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.policy {
            PolicyKind::GpCOcba | PolicyKind::Ikg => ModelKind::Gp,
            PolicyKind::COcba => ModelKind::Independent,
            PolicyKind::RoundRobin => self.round_robin_model,
        }
    }
}

/// Predicted best map after a given number of policy iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRecord {
    /// Post-initialization iteration (0 = right after initialization).
    pub iteration: usize,
    /// Total samples so far.
    pub n: usize,
    pub selected: Vec<usize>,
}

/// One diagnostics row per policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub iteration: usize,
    pub pair: (usize, usize),
    pub diagnostics: Diagnostics,
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub policy: PolicyKind,
    pub initial_samples: usize,
    pub records: Vec<SelectionRecord>,
    /// Wall-clock nanoseconds of each policy iteration, model fitting included.
    pub wall_ns: Vec<u64>,
    pub state: AllocationState,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.wall_ns.len()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.wall_ns.iter().sum()
    }

    pub fn final_selection(&self) -> &[usize] {
        &self.records.last().expect("at least the initial record").selected
    }
}

/// Read-only view handed to step observers after every update.
pub struct StepView<'a> {
    pub iteration: usize,
    pub state: &'a AllocationState,
    pub estimates: &'a EstimateGrid,
}

/// Per-alternative models for one run.
enum Models {
    Gp(Vec<AlternativeGp>),
    Independent(IndependentModel),
}

/// One RNG stream per (alternative, context) pair, so different policies see
/// the same noise sequence at each pair.
struct ObservationStreams {
    rngs: Vec<ChaCha8Rng>,
    n_contexts: usize,
}

impl ObservationStreams {
    fn new(seed: u64, n_alt: usize, n_ctx: usize) -> Self {
        let rngs = (0..n_alt * n_ctx)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1 + i as u64);
                r
            })
            .collect();
        ObservationStreams { rngs, n_contexts: n_ctx }
    }

    fn observe(&mut self, problem: &ContextualProblem, k: usize, c: usize) -> f64 {
        problem.observe(k, c, &mut self.rngs[k * self.n_contexts + c])
    }
}

/// Execute one policy run. Fully deterministic given `seed`.
pub fn run_policy(problem: &ContextualProblem, config: &RunConfig, seed: u64) -> Result<Trajectory> {
    run_policy_observed(problem, config, seed, |_| {})
}

/// [`run_policy`] with a callback invoked after initialization and after
/// every policy iteration, once the models reflect the new observation.
pub fn run_policy_observed(
    problem: &ContextualProblem,
    config: &RunConfig,
    seed: u64,
    mut observer: impl FnMut(&StepView<'_>),
) -> Result<Trajectory> {
    let (nk, nc) = (problem.n_alternatives(), problem.n_contexts());
    let n0 = config.init.initial_samples(nk, nc);
    if config.budget < n0 {
        return Err(Error::invalid(format!(
            "budget {} is below the {n0} initial samples",
            config.budget
        )));
    }
    if config.record_stride == 0 {
        return Err(Error::invalid("record stride must be positive"));
    }
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
    policy_rng.set_stream(0);
    let mut obs = ObservationStreams::new(seed, nk, nc);
    let mut state = AllocationState::new(nk, nc);
    let mut models = build_models(problem, config)?;

    for (k, c) in initial_pairs(config.init, nk, nc, &mut policy_rng) {
        let y = obs.observe(problem, k, c);
        state.record(k, c, y)?;
        models.update(k, c, y)?;
    }
    if config.policy == PolicyKind::COcba {
        if let Models::Independent(m) = &models {
            if !m.all_variances_defined() {
                return Err(Error::invalid(
                    "C-OCBA needs at least two initial samples at every pair",
                ));
            }
        }
    }

    let at = |iteration: usize, e: Error| Error::AtIteration {
        iteration,
        source: Box::new(e),
    };
    let cov_mode = if config.policy == PolicyKind::Ikg {
        CovarianceMode::Full
    } else {
        CovarianceMode::DiagonalOnly
    };

    let iterations = config.budget - n0;
    let mut records = Vec::new();
    let mut wall_ns = Vec::with_capacity(iterations);
    let mut diagnostics = Vec::new();

    if config.retrain_every > 0 {
        models.retrain(problem, &config.gp.hyper, &mut policy_rng).map_err(|e| at(0, e))?;
    }
    let mut est = models.estimates(problem, cov_mode).map_err(|e| at(0, e))?;
    records.push(SelectionRecord {
        iteration: 0,
        n: state.total(),
        selected: est.selected(),
    });
    observer(&StepView {
        iteration: 0,
        state: &state,
        estimates: &est,
    });

    for it in 0..iterations {
        let start = Instant::now();
        if config.retrain_every > 0 && it > 0 && it % config.retrain_every == 0 {
            models.retrain(problem, &config.gp.hyper, &mut policy_rng).map_err(|e| at(it, e))?;
            est = models.estimates(problem, cov_mode).map_err(|e| at(it, e))?;
        }
        let decision = decide(config.policy, &models, &est, problem, &state).map_err(|e| at(it, e))?;
        let (k, c) = decision.pair;
        let y = obs.observe(problem, k, c);
        state.record(k, c, y)?;
        models.update(k, c, y)?;
        est = models.estimates(problem, cov_mode).map_err(|e| at(it + 1, e))?;
        let ns = start.elapsed().as_nanos() as u64;
        wall_ns.push(ns);

        let done = it + 1;
        if done % config.record_stride == 0 || done == iterations {
            records.push(SelectionRecord {
                iteration: done,
                n: state.total(),
                selected: est.selected(),
            });
        }
        if config.keep_diagnostics {
            diagnostics.push(DiagnosticRow {
                iteration: done,
                pair: (k, c),
                diagnostics: decision.diagnostics,
                wall_ns: ns,
            });
        }
        observer(&StepView {
            iteration: done,
            state: &state,
            estimates: &est,
        });
    }

    Ok(Trajectory {
        policy: config.policy,
        initial_samples: n0,
        records,
        wall_ns,
        state,
        diagnostics,
    })
}

fn decide(
    policy: PolicyKind,
    models: &Models,
    est: &EstimateGrid,
    problem: &ContextualProblem,
    state: &AllocationState,
) -> Result<PolicyDecision> {
    match policy {
        PolicyKind::GpCOcba | PolicyKind::COcba => ocba_decide(est, state),
        PolicyKind::RoundRobin => Ok(round_robin_step(state)),
        PolicyKind::Ikg => {
            let Models::Gp(gps) = models else {
                return Err(Error::invalid("IKG requires GP models"));
            };
            let posts: Vec<PosteriorSummary> = gps
                .iter()
                .map(|g| g.cached_posterior().cloned().expect("posterior refreshed before deciding"))
                .collect();
            let noise: Vec<Vec<f64>> = gps
                .iter()
                .map(|g| (0..problem.n_contexts()).map(|c| g.noise_variance(c)).collect())
                .collect();
            ikg_step(&posts, problem.weights(), &noise, state)
        }
    }
}

fn initial_pairs(init: InitRule, nk: usize, nc: usize, rng: &mut impl RngCore) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    match init {
        InitRule::PerPair(m) => {
            for _ in 0..m {
                for k in 0..nk {
                    for c in 0..nc {
                        pairs.push((k, c));
                    }
                }
            }
        }
        InitRule::PerAltRandom { contexts, samples } => {
            for k in 0..nk {
                let mut chosen: Vec<usize> = sample(rng, nc, contexts.min(nc)).into_vec();
                chosen.sort_unstable();
                for c in chosen {
                    for _ in 0..samples {
                        pairs.push((k, c));
                    }
                }
            }
        }
    }
    pairs
}

fn build_models(problem: &ContextualProblem, config: &RunConfig) -> Result<Models> {
    let (nk, nc) = (problem.n_alternatives(), problem.n_contexts());
    match config.model_kind() {
        ModelKind::Independent => Ok(Models::Independent(IndependentModel::new(nk, nc))),
        ModelKind::Gp => {
            let settings = &config.gp;
            let kernel = match &settings.kernel {
                Some(k) => k.clone(),
                None => {
                    let ell = problem.contexts().median_pairwise_distance();
                    KernelSpec::new(settings.family, 1.0, vec![ell; problem.contexts().dim()])?
                }
            };
            let noise_var = problem.noise_variance();
            let gps = (0..nk)
                .map(|k| {
                    let noise = match settings.noise {
                        NoiseMode::Known => NoiseModel::Known(noise_var[k].clone()),
                        NoiseMode::Plugin(v) => NoiseModel::Plugin(v),
                    };
                    AlternativeGp::new(kernel.clone(), settings.prior_mean, noise, settings.standardize, nc)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Models::Gp(gps))
        }
    }
}

impl Models {
    fn update(&mut self, k: usize, c: usize, y: f64) -> Result<()> {
        match self {
            Models::Gp(gps) => gps[k].add_observation(c, y),
            Models::Independent(m) => {
                m.update(k, c, y);
                Ok(())
            }
        }
    }

    fn retrain<R: Rng + ?Sized>(
        &mut self,
        problem: &ContextualProblem,
        options: &HyperFitOptions,
        rng: &mut R,
    ) -> Result<()> {
        let Models::Gp(gps) = self else { return Ok(()) };
        for gp in gps.iter_mut() {
            match fit_hyperparameters(gp, problem.contexts(), options, rng) {
                Ok(fit) => {
                    if fit.changed {
                        gp.set_hyperparameters(fit.kernel, fit.noise);
                    }
                }
                Err(Error::InsufficientData(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Refresh stale posteriors and collect the estimate grid.
    fn estimates(&mut self, problem: &ContextualProblem, mode: CovarianceMode) -> Result<EstimateGrid> {
        match self {
            Models::Gp(gps) => {
                let mut mean = Vec::with_capacity(gps.len());
                let mut variance = Vec::with_capacity(gps.len());
                for gp in gps.iter_mut() {
                    let post = match gp.cached_posterior() {
                        Some(p) => p,
                        None => gp.refit(problem.contexts(), mode)?,
                    };
                    mean.push(post.mean.clone());
                    variance.push(post.variance.clone());
                }
                Ok(EstimateGrid { mean, variance })
            }
            Models::Independent(m) => {
                let (nk, nc) = (m.n_alternatives(), m.n_contexts());
                let mut mean = vec![vec![0.0; nc]; nk];
                let mut variance = vec![vec![f64::INFINITY; nc]; nk];
                for k in 0..nk {
                    for c in 0..nc {
                        let p = m.get(k, c);
                        if p.count > 0 {
                            mean[k][c] = p.mean;
                        }
                        if let Some(s2) = p.variance() {
                            variance[k][c] = s2 / p.count as f64;
                        }
                    }
                }
                Ok(EstimateGrid { mean, variance })
            }
        }
    }
}
