use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctxsel::harness::{
    read_timing, render_timing_table, run_experiment, timing_table, verify, write_result, ExperimentConfig,
};
use ctxsel::problem::parse_truth_csv;
use ctxsel::rate::RateProblem;
use ctxsel::Error;

#[derive(Parser)]
#[command(name = "ctxsel", version, about = "Contextual ranking and selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overwrite results written under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Optimal static allocation and rate for a truth table.
    Rates {
        /// CSV with header `k,c_index,f_value[,noise_sd]`.
        problem: PathBuf,
        /// Noise standard deviation for tables without a `noise_sd` column.
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Also write `rates.csv` and `rates.txt` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall-clock table of a results directory.
    Timing { dir: PathBuf },
    /// Re-check the invariants of a results directory.
    Verify { dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        return 3;
    }
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn execute(command: Command) -> ctxsel::Result<ExitCode> {
    match command {
        Command::Run { config, force } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = cfg.resolved_output_dir();
            if !force {
                ctxsel::harness::check_resume(&dir, &cfg.hash)?;
            }
            let result = run_experiment(&cfg)?;
            write_result(&result, &dir, force)?;
            print!("{}", std::fs::read_to_string(dir.join("summary.txt")).unwrap_or_default());
            println!();
            print!("{}", render_timing_table(&timing_table(&result)));
            println!("results written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Rates { problem, noise_sd, out } => {
            rates(&problem, noise_sd, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Timing { dir } => {
            print!("{}", render_timing_table(&read_timing(&dir)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { dir } => {
            let report = verify(&dir)?;
            print!("{}", report.render());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn rates(path: &Path, noise_sd: Option<f64>, out: Option<&Path>) -> ctxsel::Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let table = parse_truth_csv(&text)?;
    let sd = match (table.noise_sd, noise_sd) {
        (_, Some(s)) => vec![vec![s; table.truth[0].len()]; table.truth.len()],
        (Some(sd), None) => sd,
        (None, None) => return Err(Error::Config("no noise_sd column; pass --noise-sd".into())),
    };
    let var = sd.iter().map(|r| r.iter().map(|s| s * s).collect()).collect();
    let report = RateProblem::new(table.truth, var)?.solve_optimal_allocation()?;
    print!("{}", report.summary());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        for (name, body) in [("rates.csv", report.to_csv()), ("rates.txt", report.summary())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        }
    }
    Ok(())
}
