//! Experiment harness for the `furstlab` estimators: configs in,
//! deterministic runs on a fixed-size worker pool, report tables out.

pub mod config;
pub mod report;
pub mod run;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use furstlab::boundary::EmpiricalProjectiveMeasure;
use furstlab::LabError;
use serde::Serialize;

use config::{Command, ConfigFile, Overrides, RunConfig};
use report::{ReportRow, Row, RowMetadata, StoreOutcome, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("diagnostics block: {0}")]
    Diagnostics(String),
    #[error("estimator error: {0}")]
    Estimator(#[from] LabError),
}

impl CliError {
    /// 1 for config and io problems, 2 when diagnostics block the run,
    /// 3 for estimator failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Diagnostics(_) | CliError::Estimator(LabError::DiagnosticsContradiction(_)) => 2,
            CliError::Estimator(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Diagnostics(_) => "diagnostics",
            CliError::Estimator(_) => "estimator",
        }
    }

    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct ErrorRecord<'a> {
            schema: u32,
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&ErrorRecord { schema: SCHEMA_VERSION, error: self.kind(), message: self.to_string(), exit_code: self.exit_code() })
            .expect("error record serializes")
    }
}

pub struct RunOutput {
    pub run_id: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    /// The sampled measure of a `measure` run.
    pub measure: Option<EmpiricalProjectiveMeasure>,
}

/// Runs the command on a pool of `cfg.workers` threads. No files are touched.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let spec = cfg.load_ensemble()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let config_hash = cfg.content_hash(&spec);
    let run_id = config_hash[..12].to_string();
    let fixture = spec.name().to_string();
    let (rows, measure) = pool.install(|| -> Result<_, CliError> {
        let ctx = run::Context::new(cfg, spec);
        let needs_measure = matches!(cfg.command, Command::Measure | Command::Dimension | Command::Entropy);
        if needs_measure && !ctx.measure_defined() {
            return Err(CliError::Diagnostics(format!(
                "{} failed the irreducibility/proximality diagnostics (proximality {:?}, irreducibility {:?}); pass --assume-irreducible-proximal to run anyway",
                ctx.spec.name(),
                ctx.diagnostics.proximality_evidence.verdict,
                ctx.diagnostics.irreducibility_evidence.verdict
            )));
        }
        Ok(match cfg.command {
            Command::Spectrum => {
                let rows = run::spectrum(&ctx)?;
                (rows, None)
            }
            Command::Measure => {
                let (rows, nu) = run::measure(&ctx)?;
                (rows, Some(nu))
            }
            Command::Dimension => (run::dimension(&ctx)?, None),
            Command::Entropy => (run::entropy(&ctx)?, None),
            Command::Verify => (verify::verify_suite(&ctx), None),
        })
    })?;
    let metadata = RowMetadata {
        schema: SCHEMA_VERSION,
        fixture,
        seed: cfg.seed,
        config_hash: config_hash.clone(),
        budgets: cfg.budgets.clone(),
        assume_irreducible_proximal: cfg.assume_irreducible_proximal,
    };
    let rows = rows
        .into_iter()
        .map(|r: Row| ReportRow {
            run_id: run_id.clone(),
            command: cfg.command,
            quantity: r.quantity,
            value: r.value,
            stderr: r.stderr,
            relation: r.relation,
            target: r.target,
            tolerance: r.tolerance,
            verdict: r.verdict,
            note: r.note,
            metadata: metadata.clone(),
        })
        .collect();
    Ok(RunOutput { run_id, config_hash, rows, measure })
}

/// [`execute`], then record the rows (and a sampled measure) under `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<(RunOutput, StoreOutcome), CliError> {
    let out = execute(cfg)?;
    #[derive(Serialize)]
    struct Recorded<'a> {
        schema: u32,
        run_id: &'a str,
        config_hash: &'a str,
        ensemble: &'a str,
        command: Command,
        seed: u64,
        budgets: &'a config::Budgets,
        assume_irreducible_proximal: bool,
    }
    let json = serde_json::to_string_pretty(&Recorded {
        schema: SCHEMA_VERSION,
        run_id: &out.run_id,
        config_hash: &out.config_hash,
        ensemble: &cfg.ensemble,
        command: cfg.command,
        seed: cfg.seed,
        budgets: &cfg.budgets,
        assume_irreducible_proximal: cfg.assume_irreducible_proximal,
    })
    .expect("config serializes");
    let outcome = report::store(&cfg.output, &out.run_id, &json, &out.rows)?;
    if let Some(nu) = &out.measure {
        let path = cfg.output.join(format!("measure-{}.tsv", out.run_id));
        std::fs::write(&path, nu.to_tsv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok((out, outcome))
}

#[derive(Debug, Parser)]
#[command(name = "furstlab", version, about = "Lyapunov spectra, Furstenberg measures and their dimensions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Lyapunov exponents, multiplicities and diagnostics
    Spectrum(RunArgs),
    /// Sample the boundary measure; stationarity and hyperplane regularity
    Measure(RunArgs),
    /// Measure, transverse and conservation dimensions
    Dimension(RunArgs),
    /// Conditional entropy ladder and Lyapunov dimension
    Entropy(RunArgs),
    /// Run the acceptance battery
    Verify(RunArgs),
    /// Summarize recorded runs
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture name (E1..E4) or ensemble file; overrides the config
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (flag, then FURSTLAB_WORKERS, then config)
    #[arg(long, env = "FURSTLAB_WORKERS")]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even when the irreducibility/proximality diagnostics fail
    #[arg(long)]
    assume_irreducible_proximal: bool,
    /// Print JSON lines instead of TSV
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value = config::DEFAULT_OUTPUT)]
    out: PathBuf,
    /// Print the rows of one run
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    json: bool,
}

fn resolve(command: Command, a: &RunArgs) -> Result<RunConfig, CliError> {
    let file = match &a.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    let over = Overrides {
        ensemble: a.ensemble.clone(),
        seed: a.seed,
        output: a.out.clone(),
        workers: a.workers,
        assume_irreducible_proximal: a.assume_irreducible_proximal,
    };
    RunConfig::resolve(file, command, over)
}

fn log_error(dir: Option<&Path>, e: &CliError, err: &mut dyn Write) {
    let rec = e.record();
    let _ = writeln!(err, "{rec}");
    if let Some(dir) = dir {
        if std::fs::create_dir_all(dir).is_ok() {
            if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("errors.jsonl")) {
                let _ = writeln!(f, "{rec}");
            }
        }
    }
}

fn run_command(command: Command, a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match resolve(command, a) {
        Ok(c) => c,
        Err(e) => {
            log_error(a.out.as_deref(), &e, err);
            return e.exit_code();
        }
    };
    match run(&cfg) {
        Ok((o, outcome)) => {
            let text = if a.json { report::to_jsonl(&o.rows) } else { report::to_tsv(&o.rows) };
            let _ = out.write_all(text.as_bytes());
            match outcome {
                StoreOutcome::Appended => {}
                StoreOutcome::Reproduced => {
                    let _ = writeln!(err, "run {} already recorded with identical rows", o.run_id);
                }
                StoreOutcome::Diverged => {
                    let _ = writeln!(err, "warning: run {} already recorded with different rows; both kept", o.run_id);
                }
            }
            if command == Command::Verify {
                let s = &report::summarize(&o.rows)[0];
                let _ = writeln!(
                    err,
                    "verify {}: {} pass, {} fail, {} inconclusive, {} not-applicable",
                    s.fixture, s.pass, s.fail, s.inconclusive, s.not_applicable
                );
            }
            0
        }
        Err(e) => {
            log_error(Some(&cfg.output), &e, err);
            e.exit_code()
        }
    }
}

fn report_command(a: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let rows = match report::read_jsonl(&a.out.join("report.jsonl")) {
        Ok(r) => r,
        Err(e) => {
            log_error(None, &e, err);
            return e.exit_code();
        }
    };
    if let Some(id) = &a.run {
        let mine: Vec<ReportRow> = rows.into_iter().filter(|r| r.run_id.starts_with(id.as_str())).collect();
        if mine.is_empty() {
            let e = CliError::Config(format!("no run {id} in {}", a.out.display()));
            log_error(None, &e, err);
            return e.exit_code();
        }
        let text = if a.json { report::to_jsonl(&mine) } else { report::to_tsv(&mine) };
        let _ = out.write_all(text.as_bytes());
        return 0;
    }
    let summary = report::summarize(&rows);
    if a.json {
        for s in &summary {
            let _ = writeln!(out, "{}", serde_json::to_string(s).expect("summary serializes"));
        }
    } else {
        let _ = writeln!(out, "run_id\tcommand\tfixture\tseed\trows\tpass\tfail\tinconclusive\tnot_applicable");
        for s in &summary {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.run_id,
                s.command.as_str(),
                s.fixture,
                s.seed,
                s.rows,
                s.pass,
                s.fail,
                s.inconclusive,
                s.not_applicable
            );
        }
    }
    0
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    match &cli.command {
        Cmd::Spectrum(a) => run_command(Command::Spectrum, a, out, err),
        Cmd::Measure(a) => run_command(Command::Measure, a, out, err),
        Cmd::Dimension(a) => run_command(Command::Dimension, a, out, err),
        Cmd::Entropy(a) => run_command(Command::Entropy, a, out, err),
        Cmd::Verify(a) => run_command(Command::Verify, a, out, err),
        Cmd::Report(a) => report_command(a, out, err),
    }
}
