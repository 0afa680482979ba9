//! Report rows and the append-only report store.
//!
//! A run writes its rows to `report.tsv` and `report.jsonl` in the output
//! directory and its resolved config to `runs/<run_id>.json`. The run id is a
//! prefix of the config's content hash, so a rerun of the same config is
//! recognised and compared against the recorded rows instead of appended.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Budgets, Command};
use crate::CliError;

/// Bumped whenever a column or record field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const TSV_COLUMNS: [&str; 14] = [
    "schema",
    "run_id",
    "command",
    "fixture",
    "seed",
    "quantity",
    "value",
    "stderr",
    "relation",
    "target",
    "tolerance",
    "verdict",
    "config_hash",
    "note",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowVerdict {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

impl RowVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowVerdict::Pass => "pass",
            RowVerdict::Fail => "fail",
            RowVerdict::Inconclusive => "inconclusive",
            RowVerdict::NotApplicable => "not-applicable",
        }
    }
}

/// How `value` is compared with `target ± tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|value − target| ≤ tolerance`
    Within,
    /// `value ≤ target + tolerance`
    AtMost,
    /// `value ≥ target − tolerance`
    AtLeast,
    /// `value > target`
    Above,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::Within => "within",
            Relation::AtMost => "at-most",
            Relation::AtLeast => "at-least",
            Relation::Above => "above",
        }
    }

    /// Amount by which `value` misses the criterion (≤ 0 when it holds).
    pub fn excess(&self, value: f64, target: f64, tolerance: f64) -> f64 {
        match self {
            Relation::Within => (value - target).abs() - tolerance,
            Relation::AtMost => value - (target + tolerance),
            Relation::AtLeast => (target - tolerance) - value,
            Relation::Above => {
                if value > target {
                    -(value - target)
                } else {
                    // strict: equality misses too
                    (target - value).max(f64::MIN_POSITIVE)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMetadata {
    pub schema: u32,
    pub fixture: String,
    pub seed: u64,
    pub config_hash: String,
    pub budgets: Budgets,
    pub assume_irreducible_proximal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub command: Command,
    pub quantity: String,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub relation: Option<Relation>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Option<RowVerdict>,
    pub note: String,
    pub metadata: RowMetadata,
}

/// A row before run metadata is attached.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub quantity: String,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub relation: Option<Relation>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Option<RowVerdict>,
    pub note: String,
}

impl Row {
    pub fn value(quantity: impl Into<String>, value: f64, stderr: f64) -> Self {
        Self { quantity: quantity.into(), value: Some(value), stderr: Some(stderr), ..Default::default() }
    }

    pub fn exact(quantity: impl Into<String>, value: f64) -> Self {
        Self::value(quantity, value, 0.0)
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn verdict(mut self, verdict: RowVerdict) -> Self {
        self.verdict = Some(verdict);
        self
    }

    /// Criterion row. Fails only when the budget is adequate and the miss
    /// exceeds twice the estimator's standard error; a smaller miss, or any
    /// miss on a reduced budget, is inconclusive.
    pub fn check(
        quantity: impl Into<String>,
        value: f64,
        stderr: f64,
        relation: Relation,
        target: f64,
        tolerance: f64,
        adequate: bool,
    ) -> Self {
        let excess = relation.excess(value, target, tolerance);
        let verdict = if excess <= 0.0 && value.is_finite() {
            RowVerdict::Pass
        } else if adequate && (excess > 2.0 * stderr || !value.is_finite()) {
            RowVerdict::Fail
        } else {
            RowVerdict::Inconclusive
        };
        Self {
            quantity: quantity.into(),
            value: Some(value),
            stderr: Some(stderr),
            relation: Some(relation),
            target: Some(target),
            tolerance: Some(tolerance),
            verdict: Some(verdict),
            note: String::new(),
        }
    }

    /// Criterion row that could not be evaluated.
    pub fn unavailable(quantity: impl Into<String>, verdict: RowVerdict, note: impl Into<String>) -> Self {
        Self { quantity: quantity.into(), verdict: Some(verdict), note: note.into(), ..Default::default() }
    }
}

/// 17 significant digits; empty for a missing value.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        // normalize −0
        Some(v) => format!("{:.16e}", v + 0.0),
        None => String::new(),
    }
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

pub fn tsv_header() -> String {
    TSV_COLUMNS.join("\t")
}

pub fn tsv_line(r: &ReportRow) -> String {
    [
        r.metadata.schema.to_string(),
        r.run_id.clone(),
        r.command.as_str().into(),
        tsv_field(&r.metadata.fixture),
        r.metadata.seed.to_string(),
        tsv_field(&r.quantity),
        fmt_num(r.value),
        fmt_num(r.stderr),
        r.relation.map(|x| x.as_str()).unwrap_or("").into(),
        fmt_num(r.target),
        fmt_num(r.tolerance),
        r.verdict.map(|v| v.as_str()).unwrap_or("").into(),
        r.metadata.config_hash.clone(),
        tsv_field(&r.note),
    ]
    .join("\t")
}

pub fn to_tsv(rows: &[ReportRow]) -> String {
    let mut out = tsv_header();
    out.push('\n');
    for r in rows {
        out.push_str(&tsv_line(r));
        out.push('\n');
    }
    out
}

pub fn to_jsonl(rows: &[ReportRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::Io(format!("{}: {e}", path.display()))),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| CliError::Io(format!("{} line {}: {e}", path.display(), k + 1))))
        .collect()
}

/// What happened when a run's rows met the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    Appended,
    /// Same run id already recorded with identical rows; nothing written.
    Reproduced,
    /// Same run id recorded with different rows; the new rows were appended.
    Diverged,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn append(path: &Path, text: &str, header: Option<&str>) -> Result<(), CliError> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    if fresh {
        if let Some(h) = header {
            writeln!(f, "{h}").map_err(|e| io_err(path, e))?;
        }
    }
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn store(dir: &Path, run_id: &str, config_json: &str, rows: &[ReportRow]) -> Result<StoreOutcome, CliError> {
    fs::create_dir_all(dir.join("runs")).map_err(|e| io_err(dir, e))?;
    let jsonl = dir.join("report.jsonl");
    let previous: Vec<ReportRow> = read_jsonl(&jsonl)?.into_iter().filter(|r| r.run_id == run_id).collect();
    let outcome = if previous.is_empty() {
        StoreOutcome::Appended
    } else if previous.len() >= rows.len() && previous[previous.len() - rows.len()..] == *rows {
        return Ok(StoreOutcome::Reproduced);
    } else {
        StoreOutcome::Diverged
    };
    let cfg = dir.join("runs").join(format!("{run_id}.json"));
    fs::write(&cfg, config_json).map_err(|e| io_err(&cfg, e))?;
    let body: String = rows.iter().map(|r| tsv_line(r) + "\n").collect();
    append(&dir.join("report.tsv"), &body, Some(&tsv_header()))?;
    append(&jsonl, &to_jsonl(rows), None)?;
    Ok(outcome)
}

/// Per-run summary for the `report` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub command: Command,
    pub fixture: String,
    pub seed: u64,
    pub rows: usize,
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
    pub not_applicable: usize,
}

pub fn summarize(rows: &[ReportRow]) -> Vec<RunSummary> {
    let mut out: Vec<RunSummary> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|s| s.run_id == r.run_id) {
            Some(i) => i,
            None => {
                out.push(RunSummary {
                    run_id: r.run_id.clone(),
                    command: r.command,
                    fixture: r.metadata.fixture.clone(),
                    seed: r.metadata.seed,
                    rows: 0,
                    pass: 0,
                    fail: 0,
                    inconclusive: 0,
                    not_applicable: 0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.rows += 1;
        match r.verdict {
            Some(RowVerdict::Pass) => s.pass += 1,
            Some(RowVerdict::Fail) => s.fail += 1,
            Some(RowVerdict::Inconclusive) => s.inconclusive += 1,
            Some(RowVerdict::NotApplicable) => s.not_applicable += 1,
            None => {}
        }
    }
    out
}
