//! Maximum-likelihood fitting of kernel hyperparameters (and the plug-in
//! noise variance) by multistart coordinate-wise golden-section search in
//! log-parameter space.

use rand::Rng;

use super::gp::{AlternativeGp, NoiseModel};
use super::kernel::{ContextTable, KernelFamily, KernelSpec};
use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFitOptions {
    /// Total starts including the incumbent.
    pub starts: usize,
    pub sweeps: usize,
    pub golden_iterations: usize,
    /// A candidate replaces the incumbent only if it improves the log
    /// likelihood by more than this.
    pub min_improvement: f64,
    pub output_scale_bounds: (f64, f64),
    /// Length-scale bounds as multiples of the median pairwise context distance.
    pub length_scale_factors: (f64, f64),
    /// Plug-in noise variance bounds on the standardized scale.
    pub noise_bounds: (f64, f64),
}

impl Default for HyperFitOptions {
    fn default() -> Self {
        HyperFitOptions {
            starts: 8,
            sweeps: 3,
            golden_iterations: 20,
            min_improvement: 1e-6,
            output_scale_bounds: (1e-3, 1e3),
            length_scale_factors: (1e-2, 1e2),
            noise_bounds: (1e-6, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedHyperparameters {
    pub kernel: KernelSpec,
    pub noise: NoiseModel,
    pub log_likelihood: f64,
    /// False when the incumbent was kept.
    pub changed: bool,
}

/// Parameter layout in log space: `[θ₀, ℓ_1..ℓ_d (if any), σ² (if plug-in)]`.
struct Layout {
    family: KernelFamily,
    dim: usize,
    fit_lengths: bool,
    fit_noise: bool,
    bounds: Vec<(f64, f64)>,
}

impl Layout {
    fn decode(&self, x: &[f64], incumbent: &AlternativeGp) -> (KernelSpec, NoiseModel) {
        let output_scale = x[0].exp();
        let length_scales = if self.fit_lengths {
            x[1..=self.dim].iter().map(|v| v.exp()).collect()
        } else {
            incumbent.kernel.length_scales.clone()
        };
        let noise = if self.fit_noise {
            NoiseModel::Plugin(x[x.len() - 1].exp())
        } else {
            incumbent.noise.clone()
        };
        (
            KernelSpec {
                family: self.family,
                output_scale,
                length_scales,
            },
            noise,
        )
    }

    fn encode(&self, kernel: &KernelSpec, noise: &NoiseModel) -> Vec<f64> {
        let mut x = vec![kernel.output_scale.ln()];
        if self.fit_lengths {
            x.extend(kernel.length_scales.iter().map(|l| l.ln()));
        }
        if self.fit_noise {
            if let NoiseModel::Plugin(v) = noise {
                x.push(v.ln());
            }
        }
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
        x
    }
}

/// Maximize the exact log marginal likelihood of `gp`'s data over the
/// hyperparameter box. Never returns a point worse than the incumbent.
pub fn fit_hyperparameters<R: Rng + ?Sized>(
    gp: &AlternativeGp,
    contexts: &ContextTable,
    options: &HyperFitOptions,
    rng: &mut R,
) -> Result<FittedHyperparameters> {
    if gp.n_observations() < 2 {
        return Err(Error::InsufficientData(format!(
            "hyperparameter fitting needs at least 2 observations, have {}",
            gp.n_observations()
        )));
    }
    let fit_lengths = gp.kernel.family != KernelFamily::Independent;
    let fit_noise = matches!(gp.noise, NoiseModel::Plugin(_));
    let ell = contexts.median_pairwise_distance();
    let mut bounds = vec![(options.output_scale_bounds.0.ln(), options.output_scale_bounds.1.ln())];
    if fit_lengths {
        let (lo, hi) = options.length_scale_factors;
        bounds.extend(std::iter::repeat_n(((lo * ell).ln(), (hi * ell).ln()), gp.kernel.dim()));
    }
    if fit_noise {
        bounds.push((options.noise_bounds.0.ln(), options.noise_bounds.1.ln()));
    }
    let layout = Layout {
        family: gp.kernel.family,
        dim: gp.kernel.dim(),
        fit_lengths,
        fit_noise,
        bounds,
    };

    let objective = |x: &[f64]| -> f64 {
        let (kernel, noise) = layout.decode(x, gp);
        gp.log_marginal_likelihood(&kernel, &noise, contexts)
            .unwrap_or(f64::NEG_INFINITY)
    };

    let incumbent_ll = gp.log_marginal_likelihood(&gp.kernel, &gp.noise, contexts)?;

    let mut starts = vec![layout.encode(&gp.kernel, &gp.noise)];
    for _ in 1..options.starts.max(1) {
        starts.push(
            layout
                .bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in starts {
        let (x, ll) = coordinate_search(&objective, x0, &layout.bounds, options);
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((x, ll));
        }
    }
    let (x, ll) = best.expect("at least one start");
    if ll > incumbent_ll + options.min_improvement {
        let (kernel, noise) = layout.decode(&x, gp);
        Ok(FittedHyperparameters {
            kernel,
            noise,
            log_likelihood: ll,
            changed: true,
        })
    } else {
        Ok(FittedHyperparameters {
            kernel: gp.kernel.clone(),
            noise: gp.noise.clone(),
            log_likelihood: incumbent_ll,
            changed: false,
        })
    }
}

fn coordinate_search(
    f: &dyn Fn(&[f64]) -> f64,
    mut x: Vec<f64>,
    bounds: &[(f64, f64)],
    options: &HyperFitOptions,
) -> (Vec<f64>, f64) {
    let mut fx = f(&x);
    for _ in 0..options.sweeps {
        let before = fx;
        for i in 0..x.len() {
            let (lo, hi) = bounds[i];
            let (xi, fi) = golden_section_max(
                |v| {
                    let mut y = x.clone();
                    y[i] = v;
                    f(&y)
                },
                lo,
                hi,
                options.golden_iterations,
            );
            if fi > fx {
                x[i] = xi;
                fx = fi;
            }
        }
        if fx - before < 1e-9 {
            break;
        }
    }
    (x, fx)
}

/// Golden-section search for the maximum of `g` on `[lo, hi]`.
pub(crate) fn golden_section_max(g: impl Fn(f64) -> f64, lo: f64, hi: f64, iterations: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = g(c);
    let mut fd = g(d);
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
