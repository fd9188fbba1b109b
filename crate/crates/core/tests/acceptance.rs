//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails that is not listed in `KNOWN_FAILURES`.
//!
//! Set `ACCEPTANCE_ONLY=3,7` to run a subset.

mod common;

use std::time::Instant;

use common::{grid_optimum, median, posterior_error, random_rate_problem, random_simplex, unflatten, GpInstance};
use ctxsel::harness::{mean_stderr, replication_seed, run_experiment, ExperimentConfig, ProblemSource};
use ctxsel::model::ContextTable;
use ctxsel::policy::{
    kg_single, run_policy, run_policy_observed, GpSettings, InitRule, PolicyKind, RunConfig, Trajectory,
};
use ctxsel::problem::{make_synthetic, ContextualProblem, SyntheticSpec};
use ctxsel::rate::{pfs_slope_fit, RateProblem, RateReport};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Criteria that fail on this implementation for reasons recorded in the
/// project notes. They still run and still print FAIL.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    5,
    "residual noise at B = 50,000 on the shared 3x2 problem is about 0.1; see README, Known limitations",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// The 3×2 problem shared by criteria 4, 5, 7 and 10: unit noise, context 0
/// best is alternative 0, context 1 best is alternative 1, alternative 2 is
/// far behind in both.
fn three_by_two() -> (ContextualProblem, RateProblem) {
    let truth = vec![vec![0.0, -0.2], vec![-0.2, 0.0], vec![-0.6, -0.6]];
    let problem = ContextualProblem::new(
        ContextTable::from_points(&[0.0, 1.0]).unwrap(),
        vec![0.5, 0.5],
        truth.clone(),
        vec![vec![1.0; 2]; 3],
        0,
    )
    .unwrap();
    let rates = RateProblem::new(truth, vec![vec![1.0; 2]; 3]).unwrap();
    (problem, rates)
}

/// GP-C-OCBA with the diagonal 1e8 prior and frozen hyperparameters.
fn uninformative_run(budget: usize) -> RunConfig {
    let mut cfg = RunConfig::new(PolicyKind::GpCOcba, budget, InitRule::PerPair(2));
    cfg.retrain_every = 0;
    cfg.gp = GpSettings::uninformative(1e8, 1).unwrap();
    cfg
}

fn c1_gp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let worst = (0..100)
        .map(|_| posterior_error(&GpInstance::random(&mut rng, 6, 12)))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 5.0,
        format!("max relative error {worst:.2e} over 100 instances in {secs:.2}s"),
    )
}

fn c2_decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let inst = GpInstance::random(&mut rng, 6, 12);
        let gp = inst.model();
        let full = gp.fit_posterior(&inst.contexts).unwrap().mean;
        let mut order: Vec<usize> = (0..inst.contexts.len()).collect();
        for _ in 0..5 {
            order.shuffle(&mut rng);
            let seq = gp.sequential_posterior_mean(&inst.contexts, &order).unwrap();
            for (a, b) in seq.iter().zip(&full) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 5.0,
        format!("max |sequential - batch| {worst:.2e} over 20 instances x 5 orders in {secs:.2}s"),
    )
}

fn c3_kg_closed_form() -> Outcome {
    const DRAWS: usize = 10_000_000;
    let start = Instant::now();
    let a_vals = [-2.0, -0.5, 0.0, 0.7, 2.0];
    let b_vals = [-1.5, -0.3, 0.0, 0.4, 1.8];
    let s_vals = [0.05, 0.3, 1.0, 2.0, 5.0];
    let mut cells = Vec::new();
    for &a in &a_vals {
        for &b in &b_vals {
            for &s in &s_vals {
                cells.push((a, b, s));
            }
        }
    }
    let results: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b, s))| {
            let mut rng = ChaCha8Rng::seed_from_u64(1003);
            rng.set_stream(i as u64);
            let base = f64::max(a, b);
            let (mut sum, mut sum2) = (0.0, 0.0);
            for _ in 0..DRAWS {
                let z: f64 = StandardNormal.sample(&mut rng);
                let gain = f64::max(a, b + s * z) - base;
                sum += gain;
                sum2 += gain * gain;
            }
            let n = DRAWS as f64;
            let mean = sum / n;
            let se = ((sum2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
            (kg_single(a, b, s).unwrap(), mean, se)
        })
        .collect();
    let mut worst_z: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    let mut misses = 0;
    for (&(kg, mc, sample_se), &(a, b, s)) in results.iter().zip(&cells) {
        // Cells where 10^7 draws never beat `a` have zero sample spread, so
        // the standard error also comes from the quadrature second moment.
        let (m1, m2) = gain_moments(a, b, s);
        let se = sample_se.max(((m2 - m1 * m1).max(0.0) / DRAWS as f64).sqrt());
        let diff = (kg - mc).abs();
        if diff > 3.0 * se {
            misses += 1;
        }
        if se > 0.0 {
            worst_z = worst_z.max(diff / se);
        }
        worst_quad = worst_quad.max((kg - m1).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        misses == 0 && secs < 60.0,
        format!(
            "{misses}/125 cells outside 3 SE, worst |z| {worst_z:.2}, {DRAWS} draws per cell in {secs:.1}s; \
             max |closed form - quadrature| {worst_quad:.1e}"
        ),
    )
}

/// First and second moments of `max(a, b + sZ) − max(a, b)` by composite
/// Simpson quadrature against the normal density, split at the kink.
fn gain_moments(a: f64, b: f64, s: f64) -> (f64, f64) {
    let base = f64::max(a, b);
    let kink = (a - b) / s;
    let (lo, hi) = (f64::min(-12.0, kink - 12.0), f64::max(12.0, kink + 12.0));
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let gain = |z: f64| f64::max(a, b + s * z) - base;
    let simpson = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| {
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let m1 = simpson(lo, kink, &|z| gain(z) * phi(z)) + simpson(kink, hi, &|z| gain(z) * phi(z));
    let m2 = simpson(lo, kink, &|z| gain(z).powi(2) * phi(z)) + simpson(kink, hi, &|z| gain(z).powi(2) * phi(z));
    (m1, m2)
}

fn c4_uninformative_limit() -> Outcome {
    let (problem, _) = three_by_two();
    let cfg = uninformative_run(12 + 500);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut checks = 0usize;
    run_policy_observed(&problem, &cfg, replication_seed(1004, 0), |view| {
        for k in 0..3 {
            for c in 0..2 {
                let n = view.state.count(k, c);
                let mean = view.state.sample_mean(k, c).unwrap();
                let var = 1.0 / n as f64;
                worst_mean = worst_mean.max((view.estimates.mean[k][c] - mean).abs() / (1.0 + mean.abs()));
                worst_var = worst_var.max((view.estimates.variance[k][c] - var).abs() / var);
                checks += 1;
            }
        }
    })
    .unwrap();
    outcome(
        worst_mean <= 1e-4 && worst_var <= 1e-4,
        format!("{checks} pair checks; max mean error {worst_mean:.2e}, max relative variance error {worst_var:.2e}"),
    )
}

fn c5_allocation_convergence(report: &RateReport, rates: &RateProblem) -> Outcome {
    let (problem, _) = three_by_two();
    let cfg = uninformative_run(50_000);
    let trajs: Vec<Trajectory> = (0..20)
        .into_par_iter()
        .map(|r| run_policy(&problem, &cfg, replication_seed(1005, r)).unwrap())
        .collect();
    let residuals: Vec<_> = trajs
        .iter()
        .map(|t| rates.allocation_residuals(&t.state.global_fractions()).unwrap())
        .collect();
    let mut medians = Vec::new();
    for c in 0..2 {
        medians.push((format!("balance[{c}]"), median(residuals.iter().map(|r| r.balance[c]).collect())));
        medians.push((format!("within[{c}]"), median(residuals.iter().map(|r| r.within[c]).collect())));
    }
    medians.push(("across".into(), median(residuals.iter().map(|r| r.across).collect())));
    let max_dev = trajs
        .iter()
        .flat_map(|t| {
            t.state
                .global_fractions()
                .into_iter()
                .flatten()
                .zip(report.allocation.iter().flatten().copied().collect::<Vec<_>>())
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    let residuals_ok = medians.iter().all(|(_, v)| *v < 0.05);
    let text: Vec<String> = medians.iter().map(|(n, v)| format!("{n}={v:.3}")).collect();
    outcome(
        residuals_ok && max_dev <= 0.03,
        format!("median residuals {}; max |p - p*| over 20 runs {max_dev:.4}", text.join(" ")),
    )
}

fn c6_solver_certification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut worst_coord: f64 = 0.0;
    let mut beaten = 0;
    let mut uncertified = 0;
    for _ in 0..20 {
        let rp = random_rate_problem(&mut rng);
        let report = rp.solve_optimal_allocation().unwrap();
        if !report.certified {
            uncertified += 1;
        }
        let grid = grid_optimum(&rp);
        for (a, b) in report.allocation.iter().flatten().zip(&grid) {
            worst_coord = worst_coord.max((a - b).abs());
        }
        let n = rp.n_alternatives() * rp.n_contexts();
        for _ in 0..1000 {
            let q = unflatten(&random_simplex(&mut rng, n), rp.n_contexts());
            if rp.min_rate_unchecked(&q) > report.g_min {
                beaten += 1;
            }
        }
    }
    outcome(
        worst_coord <= 0.01 && beaten == 0 && uncertified == 0,
        format!(
            "max coordinate gap to independent search {worst_coord:.2e}; {beaten} of 20000 random points beat p*; {uncertified} uncertified"
        ),
    )
}

fn c7_pfs_rate(report: &RateReport) -> Outcome {
    let (problem, _) = three_by_two();
    let mut cfg = uninformative_run(5000);
    cfg.record_stride = 10;
    let best = problem.true_best().to_vec();
    let reps = 2000;
    let per_rep: Vec<(Vec<usize>, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let t = run_policy(&problem, &cfg, replication_seed(1007, r)).unwrap();
            let ns = t.records.iter().map(|rec| rec.n).collect();
            let wrong = t
                .records
                .iter()
                .map(|rec| rec.selected.iter().zip(&best).filter(|(a, b)| a != b).count() as f64 * 0.5)
                .collect();
            (ns, wrong)
        })
        .collect();
    let ns = &per_rep[0].0;
    let curve: Vec<(f64, f64)> = (0..ns.len())
        .filter(|&i| (500..=5000).contains(&ns[i]))
        .map(|i| {
            let pfs = per_rep.iter().map(|(_, w)| w[i]).sum::<f64>() / reps as f64;
            (ns[i] as f64, pfs)
        })
        .collect();
    match pfs_slope_fit(&curve, Some(report.eta_star())) {
        Ok(fit) => {
            let rel = fit.relative_error().unwrap();
            outcome(
                rel <= 0.25,
                format!(
                    "slope {:.3e} vs predicted {:.3e} (relative error {rel:.3}, {} points, PFS {:.4} -> {:.4})",
                    fit.slope,
                    fit.predicted.unwrap(),
                    fit.points_used,
                    curve.first().map_or(f64::NAN, |p| p.1),
                    curve.last().map_or(f64::NAN, |p| p.1),
                ),
            )
        }
        Err(e) => outcome(false, format!("slope fit failed: {e}")),
    }
}

fn c8_benchmark_dominance() -> Outcome {
    let policies = vec![PolicyKind::GpCOcba, PolicyKind::RoundRobin, PolicyKind::COcba];
    let run = RunConfig::new(PolicyKind::GpCOcba, 0, InitRule::PerPair(2));
    let mut cfg = ExperimentConfig::new(
        ProblemSource::Synthetic {
            spec: SyntheticSpec::branin_expected(),
            seed: 1,
        },
        policies,
        run,
        50,
    );
    cfg.iterations = Some(1000);
    cfg.master_seed = 1008;
    cfg.record_stride = 100;
    cfg.rehash();
    let result = run_experiment(&cfg).unwrap();
    let w = result.problem.weights();
    let ours = result.policy(PolicyKind::GpCOcba).unwrap().final_scores(w);
    let mut pass = true;
    let mut parts = vec![format!("gp-c-ocba {:.3}", mean_stderr(&ours).0)];
    for other in [PolicyKind::RoundRobin, PolicyKind::COcba] {
        let theirs = result.policy(other).unwrap().final_scores(w);
        let diffs: Vec<f64> = ours.iter().zip(&theirs).map(|(a, b)| a - b).collect();
        let (d, se) = mean_stderr(&diffs);
        let margin = d / se;
        pass &= d > 2.0 * se;
        parts.push(format!(
            "{} {:.3} (paired diff {d:.3}, {margin:.2} SE)",
            other.name(),
            mean_stderr(&theirs).0
        ));
    }
    outcome(pass, format!("final PCS_E over 50 replications: {}", parts.join(", ")))
}

fn c9_timing_ratio() -> Outcome {
    let problem = make_synthetic(&SyntheticSpec::branin_expected(), 1).unwrap();
    let time = |policy: PolicyKind, retrain_every: usize, reps: usize| -> f64 {
        let mut cfg = RunConfig::new(policy, 200 + 500, InitRule::PerPair(2));
        cfg.retrain_every = retrain_every;
        cfg.record_stride = 500;
        (0..reps)
            .map(|r| run_policy(&problem, &cfg, replication_seed(1009, r)).unwrap().total_wall_ns() as f64)
            .sum::<f64>()
            * 1e-9
    };
    // hyperparameters fitted once before the timed loop, then held fixed
    let frozen = 1_000_000;
    let ikg = time(PolicyKind::Ikg, frozen, 3);
    let ocba = time(PolicyKind::GpCOcba, frozen, 3);
    let ratio = ikg / ocba;
    let ikg_rt = time(PolicyKind::Ikg, 10, 1);
    let ocba_rt = time(PolicyKind::GpCOcba, 10, 1);
    outcome(
        ratio >= 2.0,
        format!(
            "fixed hyperparameters: IKG {:.3}s vs GP-C-OCBA {:.3}s per 500 iterations, ratio {ratio:.2}; \
             with retraining every 10 iterations (info): ratio {:.2}",
            ikg / 3.0,
            ocba / 3.0,
            ikg_rt / ocba_rt
        ),
    )
}

fn c10_coverage() -> Outcome {
    let (problem, _) = three_by_two();
    let mut cfg = uninformative_run(20_000);
    cfg.record_stride = 20_000;
    let mins: Vec<usize> = (0..10)
        .into_par_iter()
        .map(|r| {
            let t = run_policy(&problem, &cfg, replication_seed(1010, r)).unwrap();
            t.state.count_matrix().into_iter().flatten().min().unwrap()
        })
        .collect();
    let smallest = *mins.iter().min().unwrap();
    outcome(smallest >= 50, format!("smallest pair count over 10 runs: {smallest}"))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let (_, rates) = three_by_two();
    let report = rates.solve_optimal_allocation().unwrap();

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "GP oracle equivalence", Box::new(c1_gp_oracle)),
        (2, "decomposition identity", Box::new(c2_decomposition)),
        (3, "KG closed form", Box::new(c3_kg_closed_form)),
        (4, "uninformative-prior limit", Box::new(c4_uninformative_limit)),
        (5, "allocation convergence", Box::new(|| c5_allocation_convergence(&report, &rates))),
        (6, "optimal-allocation solver certification", Box::new(c6_solver_certification)),
        (7, "exponential PFS rate", Box::new(|| c7_pfs_rate(&report))),
        (8, "benchmark dominance", Box::new(c8_benchmark_dominance)),
        (9, "timing ratio", Box::new(c9_timing_ratio)),
        (10, "coverage", Box::new(c10_coverage)),
    ];

    println!(
        "shared 3x2 problem: eta* = {:.4e}, p* = {:?}",
        report.eta_star(),
        report.allocation.iter().flatten().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    let mut unexpected = Vec::new();
    let mut passed = 0;
    let mut ran = 0;
    for (id, name, run) in &criteria {
        if !wanted(*id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.iter().find(|(k, _)| k == id);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict} [{name}] {} ({secs:.1}s)", o.detail);
        if o.pass {
            passed += 1;
            if known.is_some() {
                println!("             note: listed as a known failure but passed");
            }
        } else if let Some((_, why)) = known {
            println!("             known failure: {why}");
        } else {
            unexpected.push(*id);
        }
    }
    println!("{passed}/{ran} criteria pass");
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
