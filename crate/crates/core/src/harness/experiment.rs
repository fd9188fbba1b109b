//! Replicated policy runs and PCS aggregation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{auto_record_stride, ExperimentConfig};
use crate::error::{Error, Result};
use crate::policy::{run_policy, DiagnosticRow, PolicyKind};
use crate::problem::{ContextualProblem, PcsMode};

/// Seed of replication `rep`. Every policy sees the same seed for the same
/// replication, so they face the same observation noise.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

/// What one successful replication leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub final_total: usize,
    pub final_selected: Vec<usize>,
    /// `correct[i][c]` for the `i`-th recorded iteration.
    pub correct: Vec<Vec<bool>>,
    pub iterations: usize,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub seed: u64,
    pub message: String,
    pub numerical: bool,
}

/// One point of a PCS curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PcsPoint {
    pub iteration: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResult {
    pub policy: PolicyKind,
    /// Post-initialization iterations at which the selection was recorded.
    pub record_iterations: Vec<usize>,
    pub replications: Vec<ReplicationOutcome>,
    pub failures: Vec<ReplicationFailure>,
    /// Diagnostics of the first replication, when requested.
    pub diagnostics: Vec<DiagnosticRow>,
}

impl PolicyResult {
    /// PCS curve in the given mode. `WorstCase` takes the minimum over
    /// contexts of the per-context empirical PCS.
    pub fn pcs_curve(&self, mode: PcsMode, weights: &[f64]) -> Vec<PcsPoint> {
        let r = self.replications.len();
        self.record_iterations
            .iter()
            .enumerate()
            .map(|(i, &iteration)| {
                let (mean, stderr) = match mode {
                    PcsMode::Expected => {
                        let scores: Vec<f64> = self
                            .replications
                            .iter()
                            .map(|rep| weighted(&rep.correct[i], weights))
                            .collect();
                        mean_stderr(&scores)
                    }
                    PcsMode::WorstCase => {
                        let nc = weights.len();
                        let mut worst = (f64::INFINITY, 0.0);
                        for c in 0..nc {
                            let ind: Vec<f64> =
                                self.replications.iter().map(|rep| f64::from(u8::from(rep.correct[i][c]))).collect();
                            let (m, se) = mean_stderr(&ind);
                            if m < worst.0 {
                                worst = (m, se);
                            }
                        }
                        worst
                    }
                };
                PcsPoint {
                    iteration,
                    mean,
                    stderr,
                    n_replications: r,
                }
            })
            .collect()
    }

    /// Fraction of replications with every context correct.
    pub fn all_correct_curve(&self) -> Vec<PcsPoint> {
        self.record_iterations
            .iter()
            .enumerate()
            .map(|(i, &iteration)| {
                let ind: Vec<f64> = self
                    .replications
                    .iter()
                    .map(|rep| f64::from(u8::from(rep.correct[i].iter().all(|&b| b))))
                    .collect();
                let (mean, stderr) = mean_stderr(&ind);
                PcsPoint {
                    iteration,
                    mean,
                    stderr,
                    n_replications: self.replications.len(),
                }
            })
            .collect()
    }

    /// Final PCS_E score of each replication, in replication order.
    pub fn final_scores(&self, weights: &[f64]) -> Vec<f64> {
        self.replications
            .iter()
            .map(|rep| weighted(rep.correct.last().expect("initial record"), weights))
            .collect()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.replications.iter().map(|r| r.wall_ns).sum()
    }

    pub fn total_iterations(&self) -> usize {
        self.replications.iter().map(|r| r.iterations).sum()
    }
}

fn weighted(correct: &[bool], weights: &[f64]) -> f64 {
    correct.iter().zip(weights).filter(|(ok, _)| **ok).map(|(_, w)| w).sum()
}

/// Sample mean and `sd / √R` (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub master_seed: u64,
    pub version: &'static str,
    pub problem: ContextualProblem,
    pub budget: usize,
    pub pcs_modes: Vec<PcsMode>,
    pub policies: Vec<PolicyResult>,
}

impl ExperimentResult {
    pub fn policy(&self, kind: PolicyKind) -> Option<&PolicyResult> {
        self.policies.iter().find(|p| p.policy == kind)
    }
}

/// Run every policy for the configured number of replications.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let problem = config.problem.build()?;
    let budget = config.budget(problem.n_alternatives(), problem.n_contexts());
    let n0 = config.run.init.initial_samples(problem.n_alternatives(), problem.n_contexts());
    if budget < n0 {
        return Err(Error::Config(format!("budget {budget} is below the {n0} initial samples")));
    }
    let stride = match config.record_stride {
        0 => auto_record_stride(budget - n0),
        s => s,
    };
    let jobs: Vec<(usize, usize)> = (0..config.policies.len())
        .flat_map(|p| (0..config.replications).map(move |r| (p, r)))
        .collect();
    let run_job = |&(p, rep): &(usize, usize)| {
        let mut run = config.run.clone();
        run.policy = config.policies[p];
        run.budget = budget;
        run.record_stride = stride;
        run.keep_diagnostics = config.run.keep_diagnostics && rep == 0;
        let seed = replication_seed(config.master_seed, rep);
        let outcome = run_policy(&problem, &run, seed).map(|t| {
            let best = problem.true_best();
            let correct = t
                .records
                .iter()
                .map(|r| r.selected.iter().zip(best).map(|(a, b)| a == b).collect())
                .collect();
            let iterations: Vec<usize> = t.records.iter().map(|r| r.iteration).collect();
            (
                ReplicationOutcome {
                    replication: rep,
                    seed,
                    final_total: t.state.total(),
                    final_selected: t.final_selection().to_vec(),
                    correct,
                    iterations: t.iterations(),
                    wall_ns: t.total_wall_ns(),
                },
                iterations,
                t.diagnostics,
            )
        });
        (p, rep, seed, outcome)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| jobs.par_iter().map(run_job).collect());

    let mut policies: Vec<PolicyResult> = config
        .policies
        .iter()
        .map(|&policy| PolicyResult {
            policy,
            record_iterations: Vec::new(),
            replications: Vec::new(),
            failures: Vec::new(),
            diagnostics: Vec::new(),
        })
        .collect();
    for (p, rep, seed, outcome) in outcomes {
        let res = &mut policies[p];
        match outcome {
            Ok((o, iterations, diagnostics)) => {
                if res.record_iterations.is_empty() {
                    res.record_iterations = iterations;
                }
                if rep == 0 {
                    res.diagnostics = diagnostics;
                }
                res.replications.push(o);
            }
            Err(e) => {
                log::warn!("{} replication {rep} (seed {seed}) failed: {e}", res.policy.name());
                res.failures.push(ReplicationFailure {
                    replication: rep,
                    seed,
                    message: e.to_string(),
                    numerical: e.is_numerical(),
                });
            }
        }
    }
    for res in &policies {
        let failed = res.failures.len();
        if failed * 100 > config.replications {
            let first = &res.failures[0];
            let msg = format!(
                "{}: {failed} of {} replications failed; first (seed {}): {}",
                res.policy.name(),
                config.replications,
                first.seed,
                first.message
            );
            return Err(Error::ReplicationsFailed {
                message: msg,
                numerical: res.failures.iter().all(|f| f.numerical),
            });
        }
    }
    Ok(ExperimentResult {
        config_hash: config.hash.clone(),
        master_seed: config.master_seed,
        version: env!("CARGO_PKG_VERSION"),
        problem,
        budget,
        pcs_modes: config.pcs_modes.clone(),
        policies,
    })
}
