//! Batch CLI: `simulate`, `ablation`, `solve`, `calibrate`, `tune-temperature`.
//!
//! Exit codes: 0 success, 2 schema error (malformed config/input), 3 solver
//! infeasibility, 4 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use banditlp::ablation::{run_study, StudyResult};
use banditlp::bayes::LaplaceState;
use banditlp::calibration::{fit_isotonic, CalibrationError};
use banditlp::config::{
    from_json_str, parse_ablation_config, parse_experiment_config, ConfigError,
};
use banditlp::env::EnvError;
use banditlp::experiment::{run_experiment, write_report, ExperimentError};
use banditlp::exploration::{tune_temperature, ExplorationError, ObservationContexts};
use banditlp::lp::{self, AllocationProblem, LpError, SolveConfig};

#[derive(Parser)]
#[command(
    name = "banditlp",
    version,
    about = "Constrained contextual-bandit simulation toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the S x T simulation described by a JSON experiment config and
    /// write CSV reports.
    Simulate {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the prediction-quality x temperature ablation study.
    Ablation {
        config: PathBuf,
        /// Output directory for the study CSVs.
        #[arg(long, default_value = "ablation-out")]
        out: PathBuf,
    },
    /// Solve a single allocation problem from a JSON file:
    /// {"problem": {...}, "config": {...}} (config optional).
    Solve {
        problem: PathBuf,
        /// Write the solution JSON here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit an isotonic calibrator to a CSV with header `score,label`.
    Calibrate {
        scores: PathBuf,
        /// Write the model JSON here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pick the largest temperature whose overlap-at-K stays above the safety
    /// level, using a posterior checkpoint and a contexts CSV with header
    /// `observation,f0..f{d-1}`.
    TuneTemperature {
        checkpoint: PathBuf,
        contexts: PathBuf,
        /// Overlap list depth K.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Required mean overlap.
        #[arg(long, default_value_t = 0.9)]
        p_safe: f64,
        /// Comma-separated temperature grid.
        #[arg(long, default_value = "0.0,0.25,0.5,0.75,1.0,1.5,2.0")]
        tau_grid: String,
        /// Thompson draws per grid temperature.
        #[arg(long, default_value_t = 64)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Schema(String),
    Infeasible(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Schema(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Schema(m) | Failure::Infeasible(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            ConfigError::Schema { .. } | ConfigError::Invalid { .. } => {
                Failure::Schema(e.to_string())
            }
        }
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig(_) | EnvError::BadData(_) | EnvError::Csv(_) => {
                Failure::Schema(e.to_string())
            }
            EnvError::EmptyRegion | EnvError::NoInteractions { .. } | EnvError::Io(_) => {
                Failure::Runtime(e.to_string())
            }
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Env(env) => env.into(),
            ExperimentError::Io(_) | ExperimentError::Csv(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<LpError> for Failure {
    fn from(e: LpError) -> Self {
        match e {
            LpError::InvalidProblem(_) => Failure::Schema(e.to_string()),
            LpError::InfeasibleSuspected { .. } => Failure::Infeasible(e.to_string()),
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        Failure::Schema(e.to_string())
    }
}

impl From<ExplorationError> for Failure {
    fn from(e: ExplorationError) -> Self {
        match e {
            ExplorationError::NoFeasibleTau { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Schema(e.to_string()),
        }
    }
}

fn io_failure(e: std::io::Error, path: &Path) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { config, out } => simulate(&config, out),
        Command::Ablation { config, out } => ablation(&config, &out),
        Command::Solve { problem, output } => solve(&problem, output.as_deref()),
        Command::Calibrate { scores, output } => calibrate(&scores, output.as_deref()),
        Command::TuneTemperature {
            checkpoint,
            contexts,
            k,
            p_safe,
            tau_grid,
            draws,
            seed,
        } => tune(&checkpoint, &contexts, k, p_safe, &tau_grid, draws, seed),
    }
}

/// Print to stdout, treating a closed pipe as success so `banditlp ... | head`
/// exits cleanly.
fn print_line(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn emit(text: String, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| io_failure(e, path)),
        None => print_line(&text),
    }
}

fn simulate(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut config = parse_experiment_config(config_path)?;
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    let report = run_experiment(&config)?;
    write_report(&report, &config.output_dir).map_err(Failure::from)?;
    let last_round = config.rounds() - 1;
    for s in report.summary.iter().filter(|s| s.round == last_round) {
        print_line(&format!(
            "policy {} ({}): cumulative reward {:.4} +/- {:.4}, global violation {:.4} +/- {:.4} over {} runs",
            s.policy_index,
            s.policy,
            s.cumulative_mean,
            s.cumulative_ci,
            s.global_violation_mean,
            s.global_violation_ci,
            s.n
        ))?;
    }
    if !report.run_failures.is_empty() {
        eprintln!(
            "warning: {} of {} runs failed to construct; see run_failures.csv",
            report.run_failures.len(),
            config.runs()
        );
    }
    print_line(&format!("report written to {}", config.output_dir.display()))?;
    Ok(())
}

fn write_study_csvs(study: &StudyResult, dir: &Path) -> Result<(), Failure> {
    let wrap = |e: csv::Error| Failure::Runtime(e.to_string());
    std::fs::create_dir_all(dir).map_err(|e| io_failure(e, dir))?;

    let mut w = csv::Writer::from_path(dir.join("runs.csv")).map_err(wrap)?;
    w.write_record([
        "quality_index",
        "sigma",
        "tau_index",
        "tau",
        "run",
        "truth_reward",
        "truth_unsub",
        "perturbed_unsub",
        "converged",
        "iterations",
        "error",
    ])
    .map_err(wrap)?;
    for row in &study.cells {
        for cell in row {
            for r in &cell.runs {
                w.write_record([
                    cell.quality_index.to_string(),
                    cell.sigma.to_string(),
                    cell.tau_index.to_string(),
                    cell.tau.to_string(),
                    r.run.to_string(),
                    r.truth_reward.to_string(),
                    r.truth_unsub.to_string(),
                    r.perturbed_unsub.to_string(),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    r.error.clone().unwrap_or_default(),
                ])
                .map_err(wrap)?;
            }
        }
    }
    w.flush().map_err(|e| io_failure(e, dir))?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv")).map_err(wrap)?;
    w.write_record([
        "quality_index",
        "sigma",
        "tau_index",
        "tau",
        "ruc_pct",
        "allocation_variance",
        "mean_reward",
        "mean_unsub",
    ])
    .map_err(wrap)?;
    for (q, row) in study.cells.iter().enumerate() {
        for (t, cell) in row.iter().enumerate() {
            w.write_record([
                q.to_string(),
                cell.sigma.to_string(),
                t.to_string(),
                cell.tau.to_string(),
                study.metrics.ruc[q][t].to_string(),
                study.metrics.av[q][t].to_string(),
                study.metrics.mean_reward[q][t].to_string(),
                study.metrics.mean_unsub[q][t].to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| io_failure(e, dir))?;

    let study_json = serde_json::to_string_pretty(study)
        .expect("study serialization cannot fail");
    std::fs::write(dir.join("study.json"), study_json + "\n")
        .map_err(|e| io_failure(e, dir))?;
    Ok(())
}

fn ablation(config_path: &Path, out: &Path) -> Result<(), Failure> {
    let config = parse_ablation_config(config_path)?;
    let study = run_study(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_study_csvs(&study, out)?;
    print_line(&format!("budget {}", study.budget))?;
    print_line("quality_index tau ruc_pct allocation_variance")?;
    for (q, row) in study.metrics.ruc.iter().enumerate() {
        for (t, ruc) in row.iter().enumerate() {
            print_line(&format!(
                "{q} {} {ruc:.4} {:.6e}",
                config.tau_grid[t], study.metrics.av[q][t]
            ))?;
        }
    }
    print_line(&format!("study written to {}", out.display()))?;
    Ok(())
}

/// `solve` input: the problem plus an optional solver configuration.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveFile {
    problem: AllocationProblem,
    #[serde(default)]
    config: SolveConfig,
}

fn solve(problem_path: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let text =
        std::fs::read_to_string(problem_path).map_err(|e| io_failure(e, problem_path))?;
    let file: SolveFile = from_json_str(&text)?;
    let solution = lp::solve(&file.problem, &file.config)?;
    if !solution.converged {
        eprintln!(
            "warning: best iterate returned without certification (violation {:.3e}, gap {:.3e})",
            solution.max_row_violation,
            solution.primal_objective - solution.dual_objective
        );
    }
    let text = serde_json::to_string_pretty(&solution)
        .expect("solution serialization cannot fail");
    emit(text, output)
}

fn calibrate(scores_path: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let mut reader = csv::Reader::from_path(scores_path)
        .map_err(|e| Failure::Schema(format!("{}: {e}", scores_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Failure::Schema(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["score", "label"] {
        return Err(Failure::Schema(format!(
            "expected header score,label; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Schema(e.to_string()))?;
        let parse = |s: &str| -> Result<f64, Failure> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Schema(format!("bad number {s:?}")))
        };
        scores.push(parse(&record[0])?);
        labels.push(parse(&record[1])?);
    }
    let model = fit_isotonic(&scores, &labels)?;
    let text =
        serde_json::to_string_pretty(&model).expect("model serialization cannot fail");
    emit(text, output)
}

/// Rows grouped by the `observation` column, ordered by observation id.
fn read_contexts(path: &Path) -> Result<Vec<ObservationContexts>, Failure> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Failure::Schema(e.to_string()))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("observation") {
        return Err(Failure::Schema(format!(
            "expected header observation,f0..; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let dim = headers.len() - 1;
    let mut groups: std::collections::BTreeMap<u64, ObservationContexts> =
        std::collections::BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Schema(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Failure::Schema(format!(
                "row has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Failure::Schema(format!("bad observation id {:?}", &record[0])))?;
        let context: Vec<f64> = (0..dim)
            .map(|j| {
                record[1 + j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Failure::Schema(format!("bad number {:?}", &record[1 + j])))
            })
            .collect::<Result<_, _>>()?;
        groups.entry(id).or_default().push(context);
    }
    Ok(groups.into_values().collect())
}

fn tune(
    checkpoint: &Path,
    contexts_path: &Path,
    k: usize,
    p_safe: f64,
    tau_grid: &str,
    draws: usize,
    seed: u64,
) -> Result<(), Failure> {
    let state = LaplaceState::load_json(checkpoint)
        .map_err(|e| Failure::Schema(format!("{}: {e}", checkpoint.display())))?;
    let observations = read_contexts(contexts_path)?;
    let grid: Vec<f64> = tau_grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Schema(format!("bad temperature {s:?} in tau grid")))
        })
        .collect::<Result<_, _>>()?;
    let result = tune_temperature(&state, &observations, &grid, k, p_safe, draws, seed)?;
    let text =
        serde_json::to_string_pretty(&result).expect("result serialization cannot fail");
    print_line(&text)
}
