//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use ctxsel::model::{AlternativeGp, ContextTable, KernelSpec, NoiseModel};
use ctxsel::rate::RateProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A random GP conditioning problem.
#[derive(Debug, Clone)]
pub struct GpInstance {
    pub contexts: ContextTable,
    pub kernel: KernelSpec,
    pub prior_mean: f64,
    pub noise: Vec<f64>,
    pub observations: Vec<(usize, f64)>,
}

impl GpInstance {
    pub fn random<R: Rng>(rng: &mut R, max_contexts: usize, max_obs: usize) -> Self {
        let dim = rng.random_range(1..=3);
        let n_ctx = rng.random_range(1..=max_contexts);
        let rows: Vec<Vec<f64>> = (0..n_ctx)
            .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let contexts = ContextTable::new(rows).expect("random contexts are distinct");
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let lengths: Vec<f64> = (0..dim).map(|_| 10f64.powf(rng.random_range(-0.7..0.5))).collect();
        let kernel = if rng.random_bool(0.5) {
            KernelSpec::matern52(scale, lengths).unwrap()
        } else {
            KernelSpec::squared_exponential(scale, lengths).unwrap()
        };
        let noise: Vec<f64> = (0..n_ctx).map(|_| 10f64.powf(rng.random_range(-1.5..0.0))).collect();
        let n_obs = rng.random_range(0..=max_obs);
        let observations = (0..n_obs)
            .map(|_| (rng.random_range(0..n_ctx), rng.random_range(-3.0..3.0)))
            .collect();
        GpInstance {
            contexts,
            kernel,
            prior_mean: rng.random_range(-1.0..1.0),
            noise,
            observations,
        }
    }

    /// The model under test, without standardization.
    pub fn model(&self) -> AlternativeGp {
        let mut gp = AlternativeGp::new(
            self.kernel.clone(),
            self.prior_mean,
            NoiseModel::Known(self.noise.clone()),
            false,
            self.contexts.len(),
        )
        .unwrap();
        for &(c, y) in &self.observations {
            gp.add_observation(c, y).unwrap();
        }
        gp
    }

    /// Joint-Gaussian conditioning on every raw observation, solved by LU.
    pub fn brute_force(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.contexts.len();
        let m = self.observations.len();
        let k = |a: usize, b: usize| self.kernel.eval(self.contexts.get(a), self.contexts.get(b)).unwrap();
        let k_ff = DMatrix::from_fn(n, n, |i, j| k(i, j));
        if m == 0 {
            return (vec![self.prior_mean; n], k_ff);
        }
        let obs = &self.observations;
        let k_fy = DMatrix::from_fn(n, m, |i, j| k(i, obs[j].0));
        let mut k_yy = DMatrix::from_fn(m, m, |i, j| k(obs[i].0, obs[j].0));
        for (i, &(c, _)) in obs.iter().enumerate() {
            k_yy[(i, i)] += self.noise[c];
        }
        let resid = DVector::from_iterator(m, obs.iter().map(|&(_, y)| y - self.prior_mean));
        let lu = k_yy.lu();
        let alpha = lu.solve(&resid).expect("noisy covariance is invertible");
        let gain = lu.solve(&k_fy.transpose()).unwrap();
        let mean = (&k_fy * alpha).iter().map(|v| v + self.prior_mean).collect();
        let cov = k_ff - &k_fy * gain;
        (mean, cov)
    }

    /// Raw (uncollapsed) Gaussian log likelihood of the observations.
    pub fn brute_force_lml(&self) -> f64 {
        let obs = &self.observations;
        let m = obs.len();
        let k = |a: usize, b: usize| self.kernel.eval(self.contexts.get(a), self.contexts.get(b)).unwrap();
        let mut k_yy = DMatrix::from_fn(m, m, |i, j| k(obs[i].0, obs[j].0));
        for (i, &(c, _)) in obs.iter().enumerate() {
            k_yy[(i, i)] += self.noise[c];
        }
        let resid = DVector::from_iterator(m, obs.iter().map(|&(_, y)| y - self.prior_mean));
        let lu = k_yy.clone().lu();
        let alpha = lu.solve(&resid).unwrap();
        let det = lu.determinant();
        -0.5 * resid.dot(&alpha) - 0.5 * det.ln() - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `|a − b|` relative to the larger of `|b|` and `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Largest relative error between the model posterior and brute force.
pub fn posterior_error(inst: &GpInstance) -> f64 {
    let post = inst.model().fit_posterior(&inst.contexts).unwrap();
    let (mean, cov) = inst.brute_force();
    let floor = 1e-6 * inst.kernel.output_scale.max(1.0);
    let cov_fit = post.covariance().unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..mean.len() {
        worst = worst.max(rel_err(post.mean[i], mean[i], floor));
        worst = worst.max(rel_err(post.variance[i], cov[(i, i)], floor));
        for j in 0..mean.len() {
            worst = worst.max(rel_err(cov_fit[(i, j)], cov[(i, j)], floor));
        }
    }
    worst
}

/// A uniform draw from the probability simplex of dimension `n`.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn unflatten(flat: &[f64], nc: usize) -> Vec<Vec<f64>> {
    flat.chunks(nc).map(<[f64]>::to_vec).collect()
}

/// A random rate problem with `K·|C| ≤ 9`, a unique best per context and
/// gaps bounded away from zero.
pub fn random_rate_problem<R: Rng>(rng: &mut R) -> RateProblem {
    let shapes = [(2, 1), (3, 1), (2, 2), (4, 1), (3, 2), (2, 3), (4, 2), (3, 3), (2, 4)];
    let (nk, nc) = shapes[rng.random_range(0..shapes.len())];
    loop {
        let truth: Vec<Vec<f64>> = (0..nk)
            .map(|_| (0..nc).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let var: Vec<Vec<f64>> = (0..nk)
            .map(|_| (0..nc).map(|_| rng.random_range(0.3..3.0)).collect())
            .collect();
        let separated = (0..nc).all(|c| {
            let mut col: Vec<f64> = truth.iter().map(|r| r[c]).collect();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            col[0] - col[1] > 0.1
        });
        if separated {
            return RateProblem::new(truth, var).unwrap();
        }
    }
}

fn min_g(rp: &RateProblem, flat: &[f64]) -> f64 {
    rp.min_rate_unchecked(&unflatten(flat, rp.n_contexts()))
}

/// Maximizer of `min G` over the simplex, found without the solver.
///
/// Up to three coordinates the simplex grid of resolution 1/500 is
/// enumerated exhaustively. Beyond that it uses the level-set form of the
/// problem: `min G ≥ t` holds iff every pair satisfies
/// `gap² ≥ 2t (σ_b²/p_b + σ_k²/p_k)`, and those constraints only couple
/// alternatives within one context. For `t = 1/2` each context's smallest
/// feasible mass is a one-dimensional minimization over `p_b` (scan, then
/// golden section), and homogeneity rescales the sum onto the simplex.
pub fn grid_optimum(rp: &RateProblem) -> Vec<f64> {
    let n = rp.n_alternatives() * rp.n_contexts();
    if n <= 3 {
        return exhaustive(rp, n, 500);
    }
    let (nk, nc) = (rp.n_alternatives(), rp.n_contexts());
    let mut p = vec![vec![0.0; nc]; nk];
    for c in 0..nc {
        let b = rp.best()[c];
        let truth = rp.truth();
        let var = rp.noise_var();
        let gaps: Vec<(usize, f64)> = (0..nk)
            .filter(|&k| k != b)
            .map(|k| (k, (truth[b][c] - truth[k][c]).powi(2)))
            .collect();
        let lo = gaps.iter().map(|&(_, g2)| var[b][c] / g2).fold(0.0, f64::max);
        let challenger = |pb: f64, k: usize, g2: f64| var[k][c] / (g2 - var[b][c] / pb);
        let mass = |pb: f64| pb + gaps.iter().map(|&(k, g2)| challenger(pb, k, g2)).sum::<f64>();
        let grid: Vec<f64> = (1..=4000).map(|i| lo * (1.0 + 1e-4 * 1e8f64.powf(i as f64 / 4000.0))).collect();
        let i = (0..grid.len())
            .min_by(|&i, &j| mass(grid[i]).partial_cmp(&mass(grid[j])).unwrap())
            .unwrap();
        let (mut a, mut z) = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
        if i == 0 {
            a = lo * (1.0 + 1e-12);
        }
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        for _ in 0..200 {
            let x1 = z - INV_PHI * (z - a);
            let x2 = a + INV_PHI * (z - a);
            if mass(x1) < mass(x2) {
                z = x2;
            } else {
                a = x1;
            }
        }
        let pb = 0.5 * (a + z);
        p[b][c] = pb;
        for &(k, g2) in &gaps {
            p[k][c] = challenger(pb, k, g2);
        }
    }
    let total: f64 = p.iter().flatten().sum();
    p.into_iter().flatten().map(|v| v / total).collect()
}

fn exhaustive(rp: &RateProblem, n: usize, resolution: usize) -> Vec<f64> {
    let mut best = vec![1.0 / n as f64; n];
    let mut value = f64::NEG_INFINITY;
    let mut counts = vec![0usize; n];
    fn rec(
        rp: &RateProblem,
        i: usize,
        left: usize,
        res: usize,
        counts: &mut Vec<usize>,
        best: &mut Vec<f64>,
        value: &mut f64,
    ) {
        let n = counts.len();
        if i == n - 1 {
            counts[i] = left;
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 / res as f64).collect();
            let v = min_g(rp, &p);
            if v > *value {
                *value = v;
                *best = p;
            }
            return;
        }
        for take in 0..=left {
            counts[i] = take;
            rec(rp, i + 1, left - take, res, counts, best, value);
        }
    }
    rec(rp, 0, resolution, resolution, &mut counts, &mut best, &mut value);
    best
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}
