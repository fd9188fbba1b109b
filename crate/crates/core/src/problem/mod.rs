//! Contextual R&S problem instances: finite alternatives and contexts, a
//! noisy reward oracle, context weights, and the true best-alternative map.

mod functions;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use functions::{TestFunction, HARTMANN3_DATA};

use crate::error::{Error, Result};
use crate::model::ContextTable;

/// Number of uniform draws used to estimate the function range for the noise rule.
pub const NOISE_RANGE_SAMPLES: usize = 1000;
/// σ = (f_max − f_min) · 3 / 100.
pub const NOISE_RANGE_FRACTION: f64 = 3.0 / 100.0;

const MAX_TIE_RETRIES: u64 = 100;

/// Context weights used by the Branin expected-PCS experiment.
pub const BRANIN_WEIGHTS: [f64; 10] = [0.03, 0.07, 0.2, 0.1, 0.15, 0.2, 0.02, 0.08, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct ContextualProblem {
    contexts: ContextTable,
    weights: Vec<f64>,
    /// `truth[k][c]`
    truth: Vec<Vec<f64>>,
    /// `noise_sd[k][c]`
    noise_sd: Vec<Vec<f64>>,
    best: Vec<usize>,
    seed: u64,
}

impl ContextualProblem {
    /// Build a problem, checking the weight normalization and that each
    /// context has a unique best alternative.
    pub fn new(
        contexts: ContextTable,
        weights: Vec<f64>,
        truth: Vec<Vec<f64>>,
        noise_sd: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let n_ctx = contexts.len();
        if truth.len() < 2 {
            return Err(Error::invalid("need at least two alternatives"));
        }
        if weights.len() != n_ctx {
            return Err(Error::invalid(format!("{} weights for {n_ctx} contexts", weights.len())));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        for (name, m) in [("truth", &truth), ("noise_sd", &noise_sd)] {
            if m.len() != truth.len() || m.iter().any(|row| row.len() != n_ctx) {
                return Err(Error::invalid(format!("{name} must be {} x {n_ctx}", truth.len())));
            }
        }
        if truth.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("truth must be finite"));
        }
        if noise_sd.iter().flatten().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise standard deviations must be nonnegative"));
        }
        let best = unique_argmax_per_context(&truth)?;
        Ok(ContextualProblem {
            contexts,
            weights,
            truth,
            noise_sd,
            best,
            seed,
        })
    }

    pub fn n_alternatives(&self) -> usize {
        self.truth.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> &ContextTable {
        &self.contexts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn truth(&self) -> &[Vec<f64>] {
        &self.truth
    }

    pub fn noise_sd(&self) -> &[Vec<f64>] {
        &self.noise_sd
    }

    /// Observation variances `σ²(k, c)`.
    pub fn noise_variance(&self) -> Vec<Vec<f64>> {
        self.noise_sd
            .iter()
            .map(|row| row.iter().map(|s| s * s).collect())
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replace the context weights (e.g. uniform for the worst-case objective).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let p = ContextualProblem::new(self.contexts, weights, self.truth, self.noise_sd, self.seed)?;
        self = p;
        Ok(self)
    }

    /// One noisy evaluation `F(k, c) + σ(k, c)·Z`.
    pub fn observe<R: Rng + ?Sized>(&self, k: usize, c: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.truth[k][c] + self.noise_sd[k][c] * z
    }

    /// The true best alternative for each context.
    pub fn true_best(&self) -> &[usize] {
        &self.best
    }

    /// Truth matrix as CSV with header `k,c_index,f_value`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("k,c_index,f_value\n");
        for (k, row) in self.truth.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out.push_str(&format!("{k},{c},{}\n", fmt_sig17(*v)));
            }
        }
        out
    }

    /// Context coordinates as CSV with header `c_index,x1,..,xd`.
    pub fn contexts_csv(&self) -> String {
        let mut out = String::from("c_index");
        for j in 0..self.contexts.dim() {
            out.push_str(&format!(",x{}", j + 1));
        }
        out.push('\n');
        for (c, row) in self.contexts.rows().iter().enumerate() {
            out.push_str(&c.to_string());
            for v in row {
                out.push(',');
                out.push_str(&fmt_sig17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Parsed truth table: `truth[k][c]` and, when present, `noise_sd[k][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub truth: Vec<Vec<f64>>,
    pub noise_sd: Option<Vec<Vec<f64>>>,
}

/// Parse a CSV with header `k,c_index,f_value` and an optional fourth
/// column `noise_sd`.
pub fn parse_truth_csv(text: &str) -> Result<TruthTable> {
    let parse_err = |detail: String| Error::Parse {
        what: "truth csv".into(),
        detail,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| parse_err("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_noise = match cols.as_slice() {
        ["k", "c_index", "f_value"] => false,
        ["k", "c_index", "f_value", "noise_sd"] => true,
        _ => return Err(parse_err(format!("unexpected header `{header}`"))),
    };
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(parse_err(format!("row {} has {} fields", i + 1, f.len())));
        }
        let k: usize = f[0].parse().map_err(|_| parse_err(format!("bad k `{}`", f[0])))?;
        let c: usize = f[1].parse().map_err(|_| parse_err(format!("bad c_index `{}`", f[1])))?;
        let v: f64 = f[2].parse().map_err(|_| parse_err(format!("bad f_value `{}`", f[2])))?;
        let s: f64 = if with_noise {
            f[3].parse().map_err(|_| parse_err(format!("bad noise_sd `{}`", f[3])))?
        } else {
            f64::NAN
        };
        entries.push((k, c, v, s));
    }
    let n_alt = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let n_ctx = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    if n_alt == 0 {
        return Err(parse_err("no rows".into()));
    }
    let mut truth = vec![vec![f64::NAN; n_ctx]; n_alt];
    let mut noise = vec![vec![f64::NAN; n_ctx]; n_alt];
    for (k, c, v, s) in entries {
        if !truth[k][c].is_nan() {
            return Err(parse_err(format!("duplicate entry for ({k}, {c})")));
        }
        truth[k][c] = v;
        noise[k][c] = s;
    }
    if truth.iter().flatten().any(|v| v.is_nan()) {
        return Err(parse_err("table does not cover every (k, c) pair".into()));
    }
    Ok(TruthTable {
        truth,
        noise_sd: with_noise.then_some(noise),
    })
}

/// Which synthetic weights to use.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Uniform,
    Explicit(Vec<f64>),
}

/// How initial contexts are laid out for a synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub function: TestFunction,
    pub n_alternatives: usize,
    pub n_contexts: usize,
    pub weights: WeightSpec,
}

impl SyntheticSpec {
    pub fn new(function: TestFunction, n_alternatives: usize, n_contexts: usize, weights: WeightSpec) -> Self {
        SyntheticSpec {
            function,
            n_alternatives,
            n_contexts,
            weights,
        }
    }

    /// Branin, 10 alternatives, 10 contexts, expected-PCS weights.
    pub fn branin_expected() -> Self {
        Self::new(TestFunction::Branin, 10, 10, WeightSpec::Explicit(BRANIN_WEIGHTS.to_vec()))
    }

    pub fn branin_worst_case() -> Self {
        Self::new(TestFunction::Branin, 10, 10, WeightSpec::Uniform)
    }

    pub fn griewank() -> Self {
        Self::new(TestFunction::Griewank, 10, 20, WeightSpec::Uniform)
    }

    pub fn hartmann3() -> Self {
        Self::new(TestFunction::Hartmann3, 20, 20, WeightSpec::Uniform)
    }

    pub fn cosine8() -> Self {
        Self::new(TestFunction::Cosine8, 20, 40, WeightSpec::Uniform)
    }

    /// Contexts live in the trailing `d − 1` coordinates.
    pub fn context_dim(&self) -> usize {
        self.function.dim() - 1
    }
}

/// Draw a synthetic instance. Alternatives are the left ends of `K` equal
/// cells of the first input coordinate (a grid with both endpoints would tie
/// mirrored alternatives on the even test functions), contexts are uniform draws over the remaining ones, and
/// the noise level is a fixed fraction of the estimated function range.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<ContextualProblem> {
    if spec.n_alternatives < 2 || spec.n_contexts < 1 {
        return Err(Error::invalid("need at least two alternatives and one context"));
    }
    let weights = match &spec.weights {
        WeightSpec::Uniform => vec![1.0 / spec.n_contexts as f64; spec.n_contexts],
        WeightSpec::Explicit(w) => w.clone(),
    };
    let f = spec.function;
    let domain = f.domain();
    let sd = noise_sd_for(f, seed);
    let (lo, hi) = domain[0];
    let alt_x: Vec<f64> = (0..spec.n_alternatives)
        .map(|k| lo + (hi - lo) * k as f64 / spec.n_alternatives as f64)
        .collect();

    for attempt in 0..MAX_TIE_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + attempt);
        let rows: Vec<Vec<f64>> = (0..spec.n_contexts)
            .map(|_| domain[1..].iter().map(|&(a, b)| rng.random_range(a..b)).collect())
            .collect();
        let contexts = ContextTable::new(rows)?;
        let truth: Vec<Vec<f64>> = alt_x
            .iter()
            .map(|&x1| {
                contexts
                    .rows()
                    .iter()
                    .map(|xc| {
                        let mut x = Vec::with_capacity(f.dim());
                        x.push(x1);
                        x.extend_from_slice(xc);
                        f.eval(&x)
                    })
                    .collect()
            })
            .collect();
        if unique_argmax_per_context(&truth).is_err() {
            log::warn!("tie in best alternative for {} (attempt {attempt}); redrawing contexts", f.name());
            continue;
        }
        let noise = vec![vec![sd; spec.n_contexts]; spec.n_alternatives];
        return ContextualProblem::new(contexts, weights, truth, noise, seed);
    }
    Err(Error::invalid(format!(
        "could not draw tie-free contexts for {} after {MAX_TIE_RETRIES} attempts",
        f.name()
    )))
}

/// Noise standard deviation from the range of `NOISE_RANGE_SAMPLES` uniform
/// draws over the full domain.
pub fn noise_sd_for(f: TestFunction, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let domain = f.domain();
    let (mut fmin, mut fmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..NOISE_RANGE_SAMPLES {
        let x: Vec<f64> = domain.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
        let v = f.eval(&x);
        fmin = fmin.min(v);
        fmax = fmax.max(v);
    }
    (fmax - fmin) * NOISE_RANGE_FRACTION
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn unique_argmax_per_context(truth: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n_ctx = truth[0].len();
    (0..n_ctx)
        .map(|c| {
            let b = argmax(truth.iter().map(|row| row[c]));
            let top = truth[b][c];
            if truth.iter().enumerate().any(|(k, row)| k != b && row[c] == top) {
                Err(Error::invalid(format!("context {c} has tied best alternatives")))
            } else {
                Ok(b)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PcsMode {
    /// Weighted average over contexts.
    Expected,
    /// Worst case over contexts.
    WorstCase,
}

impl PcsMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E" | "EXPECTED" => Ok(PcsMode::Expected),
            "M" | "WORST" | "WORST-CASE" | "MIN" => Ok(PcsMode::WorstCase),
            other => Err(Error::invalid(format!("unknown PCS mode `{other}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            PcsMode::Expected => "E",
            PcsMode::WorstCase => "M",
        }
    }
}

/// Per-replication contextual correctness score: the weighted fraction of
/// correctly selected contexts (`Expected`) or the all-correct indicator
/// (`WorstCase`).
pub fn contextual_pcs(selected: &[usize], truth_map: &[usize], weights: &[f64], mode: PcsMode) -> Result<f64> {
    if selected.len() != truth_map.len() || weights.len() != truth_map.len() {
        return Err(Error::invalid(format!(
            "selection covers {} contexts, truth {} and weights {}",
            selected.len(),
            truth_map.len(),
            weights.len()
        )));
    }
    let correct = selected.iter().zip(truth_map).map(|(a, b)| a == b);
    Ok(match mode {
        PcsMode::Expected => correct
            .zip(weights)
            .map(|(ok, w)| if ok { *w } else { 0.0 })
            .sum(),
        PcsMode::WorstCase => {
            if selected == truth_map {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// Format with 17 significant decimal digits in positional notation.
pub fn fmt_sig17(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}
