//! Result files. Every file starts with a `# config_hash=<hex>` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{ExperimentResult, PcsPoint};
use crate::error::{Error, Result};
use crate::policy::Diagnostics;
use crate::problem::{fmt_sig17, parse_truth_csv, PcsMode};

const HASH_PREFIX: &str = "# config_hash=";

pub const PCS_HEADER: &str = "iteration,policy,pcs_mean,pcs_stderr,n_replications";
const REPLICATIONS_HEADER: &str = "policy,replication,seed,final_total,pcs_E,all_correct,selected";
const TIMING_HEADER: &str = "policy,replications,iterations,total_seconds,seconds_per_1000_iterations";

/// A named CSV destined for the results directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub body: String,
}

/// Per-panel PCS curves, one CSV per configured mode plus the strict
/// all-correct diagnostic when the worst case is requested.
pub fn emit_plots_data(result: &ExperimentResult) -> Vec<OutputFile> {
    let weights = result.problem.weights();
    let mut out = Vec::new();
    for &mode in &result.pcs_modes {
        let curves = result
            .policies
            .iter()
            .map(|p| (p.policy.name(), p.pcs_curve(mode, weights)))
            .collect::<Vec<_>>();
        out.push(OutputFile {
            name: format!("pcs_{}.csv", mode.tag()),
            body: render_panel(&curves),
        });
        if mode == PcsMode::WorstCase {
            let curves = result
                .policies
                .iter()
                .map(|p| (p.policy.name(), p.all_correct_curve()))
                .collect::<Vec<_>>();
            out.push(OutputFile {
                name: "pcs_M_all_correct.csv".into(),
                body: render_panel(&curves),
            });
        }
    }
    out
}

fn render_panel(curves: &[(&str, Vec<PcsPoint>)]) -> String {
    let mut s = format!("{PCS_HEADER}\n");
    for (name, curve) in curves {
        for pt in curve {
            let _ = writeln!(
                s,
                "{},{name},{},{},{}",
                pt.iteration, pt.mean, pt.stderr, pt.n_replications
            );
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub policy: String,
    pub replications: usize,
    /// Policy iterations summed over replications.
    pub iterations: usize,
    pub total_seconds: f64,
}

impl TimingRow {
    /// Mean wall-clock seconds per 1000 policy iterations, model fitting
    /// included.
    pub fn seconds_per_1000(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.total_seconds * 1000.0 / self.iterations as f64
        }
    }
}

pub fn timing_table(result: &ExperimentResult) -> Vec<TimingRow> {
    result
        .policies
        .iter()
        .map(|p| TimingRow {
            policy: p.policy.name().to_string(),
            replications: p.replications.len(),
            iterations: p.total_iterations(),
            total_seconds: p.total_wall_ns() as f64 * 1e-9,
        })
        .collect()
}

/// Plain-text table, with each policy's cost relative to GP-C-OCBA when it
/// is present.
pub fn render_timing_table(rows: &[TimingRow]) -> String {
    let reference = rows
        .iter()
        .find(|r| r.policy == "gp-c-ocba")
        .map(TimingRow::seconds_per_1000);
    let mut s = format!("{:<14}{:>8}{:>12}{:>16}{:>15}\n", "policy", "reps", "iterations", "s/1000 iter", "vs gp-c-ocba");
    for r in rows {
        let ratio = match reference {
            Some(base) if base > 0.0 => format!("{:.2}", r.seconds_per_1000() / base),
            _ => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<14}{:>8}{:>12}{:>16.6}{:>15}",
            r.policy,
            r.replications,
            r.iterations,
            r.seconds_per_1000(),
            ratio
        );
    }
    s
}

fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = format!("{TIMING_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.policy,
            r.replications,
            r.iterations,
            r.total_seconds,
            r.seconds_per_1000()
        );
    }
    s
}

fn replications_csv(result: &ExperimentResult) -> String {
    let weights = result.problem.weights();
    let mut s = format!("{REPLICATIONS_HEADER}\n");
    for p in &result.policies {
        let scores = p.final_scores(weights);
        for (rep, score) in p.replications.iter().zip(scores) {
            let all = rep.correct.last().is_some_and(|c| c.iter().all(|&b| b));
            let sel: Vec<String> = rep.final_selected.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{score},{},{}",
                p.policy.name(),
                rep.replication,
                rep.seed,
                rep.final_total,
                u8::from(all),
                sel.join(";")
            );
        }
    }
    s
}

fn failures_csv(result: &ExperimentResult) -> Option<String> {
    let mut s = String::from("policy,replication,seed,message\n");
    let mut any = false;
    for p in &result.policies {
        for f in &p.failures {
            any = true;
            let _ = writeln!(
                s,
                "{},{},{},\"{}\"",
                p.policy.name(),
                f.replication,
                f.seed,
                f.message.replace('"', "'")
            );
        }
    }
    any.then_some(s)
}

fn contexts_csv(result: &ExperimentResult) -> String {
    let p = &result.problem;
    let mut s = String::from("c_index,weight");
    for j in 0..p.contexts().dim() {
        let _ = write!(s, ",x{}", j + 1);
    }
    s.push('\n');
    for (c, row) in p.contexts().rows().iter().enumerate() {
        let _ = write!(s, "{c},{}", fmt_sig17(p.weights()[c]));
        for v in row {
            let _ = write!(s, ",{}", fmt_sig17(*v));
        }
        s.push('\n');
    }
    s
}

fn truth_csv(result: &ExperimentResult) -> String {
    let p = &result.problem;
    let mut s = String::from("k,c_index,f_value,noise_sd\n");
    for k in 0..p.n_alternatives() {
        for c in 0..p.n_contexts() {
            let _ = writeln!(s, "{k},{c},{},{}", fmt_sig17(p.truth()[k][c]), fmt_sig17(p.noise_sd()[k][c]));
        }
    }
    s
}

fn diagnostics_files(result: &ExperimentResult) -> Vec<OutputFile> {
    let mut out = Vec::new();
    for p in &result.policies {
        let mut body = String::new();
        for row in &p.diagnostics {
            let (k, c) = row.pair;
            match &row.diagnostics {
                Diagnostics::Ocba { zeta_min, psi1, psi2, .. } => {
                    if body.is_empty() {
                        body.push_str("iter,k,c,zeta_min,psi1,psi2,wall_ns\n");
                    }
                    let _ = writeln!(body, "{},{k},{c},{zeta_min},{psi1},{psi2},{}", row.iteration, row.wall_ns);
                }
                Diagnostics::Ikg { ikg_max, .. } => {
                    if body.is_empty() {
                        body.push_str("iter,k,c,ikg_max,wall_ns\n");
                    }
                    let _ = writeln!(body, "{},{k},{c},{ikg_max},{}", row.iteration, row.wall_ns);
                }
                Diagnostics::None => {}
            }
        }
        if !body.is_empty() {
            out.push(OutputFile {
                name: format!("diagnostics_{}.csv", p.policy.name()),
                body,
            });
        }
    }
    out
}

fn summary_txt(result: &ExperimentResult) -> String {
    let p = &result.problem;
    let mut s = String::new();
    let _ = writeln!(s, "version = {}", result.version);
    let _ = writeln!(s, "master_seed = {}", result.master_seed);
    let _ = writeln!(s, "problem_seed = {}", p.seed());
    let _ = writeln!(s, "alternatives = {}", p.n_alternatives());
    let _ = writeln!(s, "contexts = {}", p.n_contexts());
    let _ = writeln!(s, "budget = {}", result.budget);
    let best: Vec<String> = p.true_best().iter().map(usize::to_string).collect();
    let _ = writeln!(s, "true_best = {}", best.join(";"));
    for pol in &result.policies {
        let _ = writeln!(s);
        let _ = writeln!(s, "[{}]", pol.policy.name());
        let _ = writeln!(s, "replications = {}", pol.replications.len());
        let _ = writeln!(s, "failures = {}", pol.failures.len());
        for &mode in &result.pcs_modes {
            if let Some(last) = pol.pcs_curve(mode, p.weights()).last() {
                let _ = writeln!(s, "final_pcs_{} = {} +/- {}", mode.tag(), last.mean, last.stderr);
            }
        }
    }
    s
}

/// Every file of a result directory, in write order.
pub fn result_files(result: &ExperimentResult) -> Vec<OutputFile> {
    let mut files = vec![
        OutputFile {
            name: "summary.txt".into(),
            body: summary_txt(result),
        },
        OutputFile {
            name: "truth.csv".into(),
            body: truth_csv(result),
        },
        OutputFile {
            name: "contexts.csv".into(),
            body: contexts_csv(result),
        },
        OutputFile {
            name: "replications.csv".into(),
            body: replications_csv(result),
        },
        OutputFile {
            name: "timing.csv".into(),
            body: timing_csv(&timing_table(result)),
        },
    ];
    files.extend(emit_plots_data(result));
    files.extend(diagnostics_files(result));
    if let Some(body) = failures_csv(result) {
        files.push(OutputFile {
            name: "failures.csv".into(),
            body,
        });
    }
    files
}

/// Hash recorded in an existing file, if it carries one.
fn recorded_hash(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .next()?
        .strip_prefix(HASH_PREFIX)
        .map(|h| h.trim().to_string())
}

/// Write all result files into `dir`. Existing results produced by a
/// different configuration are left alone unless `force` is set.
pub fn write_result(result: &ExperimentResult, dir: &Path, force: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !force {
        check_resume(dir, &result.config_hash)?;
    }
    for f in result_files(result) {
        let path = dir.join(&f.name);
        let text = format!("{HASH_PREFIX}{}\n{}", result.config_hash, f.body);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Refuse to touch a results directory written under another config.
pub fn check_resume(dir: &Path, hash: &str) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    for entry in entries.flatten() {
        let path = entry.path();
        if let Some(found) = recorded_hash(&path) {
            if found != hash {
                return Err(Error::Config(format!(
                    "{} was written by config {found}, not {hash}; refusing to overwrite",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<(String, Vec<csv::StringRecord>, csv::StringRecord)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .map(str::trim)
        .unwrap_or_default()
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, e.to_string()))?
        .clone();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_error(path, e.to_string()))?;
    Ok((hash, rows, headers))
}

fn parse_error(path: &Path, detail: String) -> Error {
    Error::Parse {
        what: path.display().to_string(),
        detail,
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_error(path, format!("bad field {i} in `{}`", rec.iter().collect::<Vec<_>>().join(","))))
}

/// Read `timing.csv` back.
pub fn read_timing(dir: &Path) -> Result<Vec<TimingRow>> {
    let path = dir.join("timing.csv");
    let (_, rows, _) = read_csv(&path)?;
    rows.iter()
        .map(|r| {
            Ok(TimingRow {
                policy: field(r, 0, &path)?,
                replications: field(r, 1, &path)?,
                iterations: field(r, 2, &path)?,
                total_seconds: field(r, 3, &path)?,
            })
        })
        .collect()
}

/// Outcome of re-checking a results directory.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<(String, bool, String)>,
}

impl VerifyReport {
    fn push(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.checks.push((name.to_string(), ok, detail.into()));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, ok, detail) in &self.checks {
            let _ = writeln!(s, "{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        }
        s
    }
}

/// Re-check the invariants of a results directory.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();

    // provenance
    let mut hashes = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.flatten() {
        let path = entry.path();
        if path.is_file() {
            hashes.insert(
                entry.file_name().to_string_lossy().into_owned(),
                recorded_hash(&path).unwrap_or_default(),
            );
        }
    }
    let distinct: std::collections::BTreeSet<_> = hashes.values().collect();
    report.push(
        "config hash",
        distinct.len() == 1 && !distinct.iter().next().is_some_and(|h| h.is_empty()),
        format!("{} files, {} distinct hashes", hashes.len(), distinct.len()),
    );

    let summary_path = dir.join("summary.txt");
    let summary = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let budget: usize = summary
        .lines()
        .find_map(|l| l.strip_prefix("budget = "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_error(&summary_path, "missing budget".into()))?;

    let truth_text = fs::read_to_string(dir.join("truth.csv")).map_err(|e| Error::io(dir.join("truth.csv"), e))?;
    let truth = parse_truth_csv(&truth_text)?;
    let nc = truth.truth[0].len();
    let best: Vec<usize> = (0..nc)
        .map(|c| crate::problem::argmax(truth.truth.iter().map(|r| r[c])))
        .collect();
    let ctx_path = dir.join("contexts.csv");
    let (_, ctx_rows, _) = read_csv(&ctx_path)?;
    let weights = ctx_rows
        .iter()
        .map(|r| field::<f64>(r, 1, &ctx_path))
        .collect::<Result<Vec<_>>>()?;

    // replications
    let rep_path = dir.join("replications.csv");
    let (_, reps, _) = read_csv(&rep_path)?;
    let mut budget_ok = true;
    let mut score_ok = true;
    let mut final_scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &reps {
        let policy: String = field(r, 0, &rep_path)?;
        let total: usize = field(r, 3, &rep_path)?;
        let score: f64 = field(r, 4, &rep_path)?;
        let selected = r
            .get(6)
            .unwrap_or_default()
            .split(';')
            .map(|v| v.parse::<usize>().map_err(|_| parse_error(&rep_path, format!("bad selection `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        budget_ok &= total == budget;
        let recomputed: f64 = selected
            .iter()
            .zip(&best)
            .zip(&weights)
            .filter(|((a, b), _)| a == b)
            .map(|(_, w)| w)
            .sum();
        score_ok &= (recomputed - score).abs() <= 1e-12;
        final_scores.entry(policy).or_default().push(score);
    }
    report.push("budget conservation", budget_ok, format!("{} replications, budget {budget}", reps.len()));
    report.push("replication scores", score_ok, "PCS_E recomputed from selections and truth");

    // curves
    let mut panels: BTreeMap<String, BTreeMap<(String, usize), (f64, usize)>> = BTreeMap::new();
    for tag in ["E", "M"] {
        let path = dir.join(format!("pcs_{tag}.csv"));
        if !path.exists() {
            continue;
        }
        let (_, rows, _) = read_csv(&path)?;
        let mut in_range = true;
        let mut counts_ok = true;
        let mut last_count: BTreeMap<String, usize> = BTreeMap::new();
        let mut panel = BTreeMap::new();
        for r in &rows {
            let it: usize = field(r, 0, &path)?;
            let policy: String = field(r, 1, &path)?;
            let mean: f64 = field(r, 2, &path)?;
            let n: usize = field(r, 4, &path)?;
            in_range &= (0.0..=1.0).contains(&mean);
            if let Some(prev) = last_count.insert(policy.clone(), n) {
                counts_ok &= prev == n;
            }
            panel.insert((policy, it), (mean, n));
        }
        report.push(&format!("pcs_{tag} range"), in_range, format!("{} rows", rows.len()));
        report.push(&format!("pcs_{tag} replication counts"), counts_ok, "constant along each curve");
        panels.insert(tag.to_string(), panel);
    }
    if let (Some(e), Some(m)) = (panels.get("E"), panels.get("M")) {
        let ok = m
            .iter()
            .all(|(key, (vm, _))| e.get(key).is_none_or(|(ve, _)| *vm <= ve + 1e-12));
        report.push("PCS_M <= PCS_E", ok, "pointwise");
    }
    if let Some(e) = panels.get("E") {
        let mut ok = true;
        for (policy, scores) in &final_scores {
            let last = e.iter().filter(|((p, _), _)| p == policy).max_by_key(|((_, it), _)| *it);
            if let Some((_, (mean, n))) = last {
                let m = scores.iter().sum::<f64>() / scores.len() as f64;
                ok &= *n == scores.len() && (m - mean).abs() <= 1e-12;
            }
        }
        report.push("final PCS_E", ok, "curve endpoint matches replication scores");
    }
    Ok(report)
}
