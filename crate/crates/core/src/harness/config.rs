//! Experiment configuration: a TOML file with `[problem]`, `[experiment]`
//! and `[model]` tables. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ContextTable, KernelFamily, KernelSpec};
use crate::policy::{GpSettings, InitRule, ModelKind, NoiseMode, PolicyKind, RunConfig};
use crate::problem::{
    make_synthetic, parse_truth_csv, ContextualProblem, PcsMode, SyntheticSpec, TestFunction, WeightSpec,
    BRANIN_WEIGHTS,
};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "CTXSEL_OUTPUT_ROOT";

/// Post-initialization iteration count up to which PCS is recorded at every
/// iteration; longer runs record every `LONG_RUN_STRIDE`-th.
pub const PER_ITERATION_LIMIT: usize = 2000;
pub const LONG_RUN_STRIDE: usize = 10;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    experiment: RawExperiment,
    #[serde(default)]
    model: RawModel,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawWeights {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    function: Option<String>,
    alternatives: Option<usize>,
    contexts: Option<usize>,
    weights: Option<RawWeights>,
    #[serde(default)]
    seed: u64,
    truth_csv: Option<PathBuf>,
    contexts_csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    policies: Vec<String>,
    budget: Option<usize>,
    iterations: Option<usize>,
    replications: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_pcs")]
    pcs: Vec<String>,
    output: PathBuf,
    #[serde(default)]
    threads: usize,
    #[serde(default)]
    record_stride: usize,
    #[serde(default)]
    diagnostics: bool,
    /// Timing runs are single-threaded.
    #[serde(default)]
    timing: bool,
    #[serde(default = "default_init")]
    init: String,
}

fn default_pcs() -> Vec<String> {
    vec!["E".into(), "M".into()]
}

fn default_init() -> String {
    "per-pair 2".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    kernel: String,
    noise: String,
    plugin_initial: f64,
    standardize: bool,
    retrain_every: usize,
    prior_variance: Option<f64>,
    prior_mean: f64,
    round_robin_model: String,
}

impl Default for RawModel {
    fn default() -> Self {
        RawModel {
            kernel: "matern52".into(),
            noise: "known".into(),
            plugin_initial: 0.1,
            standardize: true,
            retrain_every: 10,
            prior_variance: None,
            prior_mean: 0.0,
            round_robin_model: "gp".into(),
        }
    }
}

/// Where the problem instance comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Synthetic { spec: SyntheticSpec, seed: u64 },
    Explicit(ContextualProblem),
}

impl ProblemSource {
    pub fn build(&self) -> Result<ContextualProblem> {
        match self {
            ProblemSource::Synthetic { spec, seed } => make_synthetic(spec, *seed),
            ProblemSource::Explicit(p) => Ok(p.clone()),
        }
    }
}

/// Validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub policies: Vec<PolicyKind>,
    /// Per-run settings shared by every policy; `policy` is overwritten.
    pub run: RunConfig,
    /// Budget given as post-initialization iterations rather than a total.
    pub iterations: Option<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub pcs_modes: Vec<PcsMode>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Record stride; 0 picks one from the run length.
    pub record_stride: usize,
    /// Hex SHA-256 of the configuration text.
    pub hash: String,
}

impl ExperimentConfig {
    /// Configuration built in code. The hash covers the debug rendering of
    /// the settings.
    pub fn new(problem: ProblemSource, policies: Vec<PolicyKind>, run: RunConfig, replications: usize) -> Self {
        let mut cfg = ExperimentConfig {
            problem,
            policies,
            run,
            iterations: None,
            replications,
            master_seed: 0,
            pcs_modes: vec![PcsMode::Expected, PcsMode::WorstCase],
            output_dir: PathBuf::from("results"),
            threads: 0,
            record_stride: 0,
            hash: String::new(),
        };
        cfg.rehash();
        cfg
    }

    /// Recompute the hash after editing fields in code.
    pub fn rehash(&mut self) {
        self.hash = String::new();
        self.hash = sha256_hex(format!("{self:?}").as_bytes());
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parse configuration text; relative CSV paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let problem = build_problem(&raw.problem, base)?;
        let ex = &raw.experiment;
        if ex.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if ex.policies.is_empty() {
            return Err(Error::Config("no policies listed".into()));
        }
        let policies = ex
            .policies
            .iter()
            .map(|p| PolicyKind::parse(p).map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        let pcs_modes = ex
            .pcs
            .iter()
            .map(|m| PcsMode::parse(m).map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        let init = parse_init(&ex.init)?;
        let (budget, iterations) = match (ex.budget, ex.iterations) {
            (Some(b), None) => (b, None),
            (None, Some(i)) => (0, Some(i)),
            _ => return Err(Error::Config("give exactly one of `budget` and `iterations`".into())),
        };
        let gp = gp_settings(&raw.model, context_dim(&problem))?;
        let round_robin_model = match raw.model.round_robin_model.as_str() {
            "gp" => ModelKind::Gp,
            "independent" => ModelKind::Independent,
            other => return Err(Error::Config(format!("unknown round_robin_model `{other}`"))),
        };
        let mut run = RunConfig::new(policies[0], budget, init);
        run.retrain_every = raw.model.retrain_every;
        run.gp = gp;
        run.round_robin_model = round_robin_model;
        run.keep_diagnostics = ex.diagnostics;
        Ok(ExperimentConfig {
            problem,
            policies,
            run,
            iterations,
            replications: ex.replications,
            master_seed: ex.seed,
            pcs_modes,
            output_dir: ex.output.clone(),
            threads: if ex.timing { 1 } else { ex.threads },
            record_stride: ex.record_stride,
            hash: sha256_hex(text.as_bytes()),
        })
    }

    /// Total budget for a problem with the given shape.
    pub fn budget(&self, n_alternatives: usize, n_contexts: usize) -> usize {
        match self.iterations {
            Some(i) => i + self.run.init.initial_samples(n_alternatives, n_contexts),
            None => self.run.budget,
        }
    }

    /// Output directory after applying the root override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir, std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
    }
}

pub(crate) fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Record stride for a run with `iterations` policy steps.
pub fn auto_record_stride(iterations: usize) -> usize {
    if iterations <= PER_ITERATION_LIMIT {
        1
    } else {
        LONG_RUN_STRIDE
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

fn context_dim(p: &ProblemSource) -> usize {
    match p {
        ProblemSource::Synthetic { spec, .. } => spec.context_dim(),
        ProblemSource::Explicit(p) => p.contexts().dim(),
    }
}

fn parse_init(s: &str) -> Result<InitRule> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let num = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad count `{t}` in init rule `{s}`")))
    };
    match parts.as_slice() {
        ["per-pair", m] => Ok(InitRule::PerPair(num(m)?)),
        ["per-alt-random", j, m] => Ok(InitRule::PerAltRandom {
            contexts: num(j)?,
            samples: num(m)?,
        }),
        _ => Err(Error::Config(format!(
            "init rule `{s}`: expected `per-pair <m>` or `per-alt-random <contexts> <m>`"
        ))),
    }
}

fn gp_settings(m: &RawModel, dim: usize) -> Result<GpSettings> {
    let family = KernelFamily::parse(&m.kernel).map_err(config_err)?;
    let noise = match m.noise.as_str() {
        "known" => NoiseMode::Known,
        "plugin" => NoiseMode::Plugin(m.plugin_initial),
        other => return Err(Error::Config(format!("unknown noise mode `{other}`"))),
    };
    let kernel = match (family, m.prior_variance) {
        (KernelFamily::Independent, Some(v)) => Some(KernelSpec::independent(v, dim).map_err(config_err)?),
        (KernelFamily::Independent, None) => {
            return Err(Error::Config("the independent kernel needs `prior_variance`".into()))
        }
        (_, Some(_)) => return Err(Error::Config("`prior_variance` only applies to the independent kernel".into())),
        (_, None) => None,
    };
    Ok(GpSettings {
        family,
        kernel,
        noise,
        standardize: m.standardize,
        prior_mean: m.prior_mean,
        ..GpSettings::default()
    })
}

fn build_problem(raw: &RawProblem, base: &Path) -> Result<ProblemSource> {
    match (&raw.function, &raw.truth_csv) {
        (Some(name), None) => {
            if raw.contexts_csv.is_some() {
                return Err(Error::Config("`contexts_csv` only applies with `truth_csv`".into()));
            }
            let function = TestFunction::parse(name).map_err(config_err)?;
            let preset = match function {
                TestFunction::Branin => SyntheticSpec::branin_worst_case(),
                TestFunction::Griewank => SyntheticSpec::griewank(),
                TestFunction::Hartmann3 => SyntheticSpec::hartmann3(),
                TestFunction::Cosine8 => SyntheticSpec::cosine8(),
            };
            let weights = match &raw.weights {
                None => WeightSpec::Uniform,
                Some(RawWeights::Named(n)) if n == "uniform" => WeightSpec::Uniform,
                Some(RawWeights::Named(n)) if n == "branin" => WeightSpec::Explicit(BRANIN_WEIGHTS.to_vec()),
                Some(RawWeights::Named(n)) => return Err(Error::Config(format!("unknown weights `{n}`"))),
                Some(RawWeights::Explicit(w)) => WeightSpec::Explicit(w.clone()),
            };
            let spec = SyntheticSpec::new(
                function,
                raw.alternatives.unwrap_or(preset.n_alternatives),
                raw.contexts.unwrap_or(preset.n_contexts),
                weights,
            );
            Ok(ProblemSource::Synthetic { spec, seed: raw.seed })
        }
        (None, Some(truth_path)) => {
            if raw.alternatives.is_some() || raw.contexts.is_some() {
                return Err(Error::Config("counts come from the truth table; drop `alternatives`/`contexts`".into()));
            }
            let path = base.join(truth_path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let table = parse_truth_csv(&text)?;
            let noise_sd = table
                .noise_sd
                .ok_or_else(|| Error::Config("truth table needs a `noise_sd` column to run".into()))?;
            let nc = table.truth[0].len();
            let contexts = match &raw.contexts_csv {
                Some(p) => {
                    let path = base.join(p);
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    parse_contexts_csv(&text)?
                }
                None => ContextTable::from_points(&(0..nc).map(|c| c as f64).collect::<Vec<_>>())?,
            };
            let weights = match &raw.weights {
                None => vec![1.0 / nc as f64; nc],
                Some(RawWeights::Named(n)) if n == "uniform" => vec![1.0 / nc as f64; nc],
                Some(RawWeights::Explicit(w)) => w.clone(),
                Some(RawWeights::Named(n)) => return Err(Error::Config(format!("unknown weights `{n}`"))),
            };
            let p = ContextualProblem::new(contexts, weights, table.truth, noise_sd, raw.seed).map_err(config_err)?;
            Ok(ProblemSource::Explicit(p))
        }
        _ => Err(Error::Config("give exactly one of `function` and `truth_csv` in [problem]".into())),
    }
}

/// Parse `c_index,x1,..,xd` (extra `weight` column ignored).
pub fn parse_contexts_csv(text: &str) -> Result<ContextTable> {
    let err = |detail: String| Error::Parse {
        what: "contexts csv".into(),
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let xcols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x'))
        .map(|(i, _)| i)
        .collect();
    if headers.get(0) != Some("c_index") || xcols.is_empty() {
        return Err(err(format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let c: usize = rec[0].parse().map_err(|_| err(format!("bad c_index `{}`", &rec[0])))?;
        let x = xcols
            .iter()
            .map(|&i| rec[i].parse::<f64>().map_err(|_| err(format!("bad coordinate `{}`", &rec[i]))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((c, x));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(err("c_index must cover 0..|C| exactly once".into()));
    }
    ContextTable::new(rows.into_iter().map(|r| r.1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRANIN: &str = r#"
[problem]
function = "branin"
weights = "branin"
seed = 3

[experiment]
policies = ["gp-c-ocba", "ikg", "round-robin"]
iterations = 2000
replications = 100
output = "results/branin"
"#;

    #[test]
    fn parses_branin_setup() {
        let cfg = ExperimentConfig::parse(BRANIN, Path::new(".")).unwrap();
        let ProblemSource::Synthetic { spec, seed } = &cfg.problem else {
            panic!("expected synthetic problem");
        };
        assert_eq!((spec.n_alternatives, spec.n_contexts, *seed), (10, 10, 3));
        assert_eq!(spec.weights, WeightSpec::Explicit(BRANIN_WEIGHTS.to_vec()));
        assert_eq!(cfg.policies.len(), 3);
        assert_eq!(cfg.run.init, InitRule::PerPair(2));
        assert_eq!(cfg.run.retrain_every, 10);
        assert_eq!(cfg.budget(10, 10), 2200);
        assert_eq!(cfg.pcs_modes, vec![PcsMode::Expected, PcsMode::WorstCase]);
        assert_eq!(cfg.hash.len(), 64);
        assert_eq!(cfg.threads, 0);
        let timed = ExperimentConfig::parse(&BRANIN.replace("replications = 100", "replications = 100\ntiming = true\nthreads = 4"), Path::new(".")).unwrap();
        assert_eq!(timed.threads, 1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = BRANIN.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(matches!(ExperimentConfig::parse(&text, Path::new(".")), Err(Error::Config(_))));
        let text = BRANIN.replace("[experiment]", "[experiment]\nthreds = 2");
        assert!(matches!(ExperimentConfig::parse(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("replications = 100", "replications = 0"),
            ("iterations = 2000", "iterations = 2000\nbudget = 10"),
            ("\"ikg\"", "\"ikgg\""),
            ("weights = \"branin\"", "weights = \"heavy\""),
        ] {
            let text = BRANIN.replace(from, to);
            assert!(ExperimentConfig::parse(&text, Path::new(".")).is_err(), "{to}");
        }
    }

    #[test]
    fn init_rules() {
        assert_eq!(parse_init("per-pair 3").unwrap(), InitRule::PerPair(3));
        assert_eq!(
            parse_init("per-alt-random 6 1").unwrap(),
            InitRule::PerAltRandom { contexts: 6, samples: 1 }
        );
        assert!(parse_init("per-pair").is_err());
        assert!(parse_init("random 2").is_err());
    }

    #[test]
    fn model_section() {
        let text = format!(
            "{BRANIN}\n[model]\nkernel = \"independent\"\nprior_variance = 1e8\nstandardize = false\nretrain_every = 0\n"
        );
        let cfg = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.run.gp.family, KernelFamily::Independent);
        assert_eq!(cfg.run.retrain_every, 0);
        let text = format!("{BRANIN}\n[model]\nprior_variance = 1e8\n");
        assert!(ExperimentConfig::parse(&text, Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_text() {
        let a = ExperimentConfig::parse(BRANIN, Path::new(".")).unwrap();
        let b = ExperimentConfig::parse(&BRANIN.replace("seed = 3", "seed = 4"), Path::new(".")).unwrap();
        assert_ne!(a.hash, b.hash);
    }

    #[test]
    fn output_root_override() {
        let rel = Path::new("results/x");
        assert_eq!(resolve_output(rel, Some("/tmp/o".into())), PathBuf::from("/tmp/o/results/x"));
        assert_eq!(resolve_output(Path::new("/abs"), Some("/tmp/o".into())), PathBuf::from("/abs"));
        assert_eq!(resolve_output(rel, None), PathBuf::from("results/x"));
    }

    #[test]
    fn contexts_csv_round_trip() {
        let p = make_synthetic(&SyntheticSpec::hartmann3(), 2).unwrap();
        let t = parse_contexts_csv(&p.contexts_csv()).unwrap();
        assert_eq!(&t, p.contexts());
    }

    #[test]
    fn explicit_truth_table() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("truth.csv"),
            "k,c_index,f_value,noise_sd\n0,0,1.0,1\n0,1,0.0,1\n1,0,0.0,1\n1,1,1.0,1\n",
        )
        .unwrap();
        let text = r#"
[problem]
truth_csv = "truth.csv"
[experiment]
policies = ["c-ocba"]
budget = 20
replications = 2
output = "out"
"#;
        let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
        let p = cfg.problem.build().unwrap();
        assert_eq!(p.true_best(), &[0, 1]);
        assert_eq!(p.weights(), &[0.5, 0.5]);
    }
}
