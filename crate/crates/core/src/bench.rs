//! Benchmark results, report rendering and trainer configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::instruct::TaskKind;
use crate::metrics::{evaluate_corpus, MetricError, MetricReport, TokenMode, REPORT_COLUMNS};
use crate::Error;

/// One model reply to one eval sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub sample_id: String,
    pub candidate: String,
    pub reference: String,
    /// Set when the request failed after retries; the candidate is then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub model: String,
    pub task: TaskKind,
    pub report: MetricReport,
    pub failures: usize,
    /// Ordered by sample id.
    pub responses: Vec<SampleResponse>,
}

impl TaskRun {
    /// Scores the stored responses from scratch.
    pub fn recompute(&self, mode: TokenMode) -> Result<MetricReport, MetricError> {
        let pairs: Vec<(&str, &str)> = self
            .responses
            .iter()
            .map(|r| (r.candidate.as_str(), r.reference.as_str()))
            .collect();
        evaluate_corpus(&pairs, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedModel {
    pub model: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_at: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: TokenMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub metadata: RunMetadata,
    /// Models in configuration order, including skipped ones.
    pub models: Vec<String>,
    pub runs: Vec<TaskRun>,
    pub skipped: Vec<SkippedModel>,
}

impl BenchmarkResult {
    /// Tasks present in the result, in canonical order.
    pub fn tasks(&self) -> Vec<TaskKind> {
        TaskKind::ALL
            .into_iter()
            .filter(|t| self.runs.iter().any(|r| r.task == *t))
            .collect()
    }

    /// Runs of one task in model configuration order.
    pub fn rows(&self, task: TaskKind) -> Vec<&TaskRun> {
        self.models
            .iter()
            .filter_map(|m| self.runs.iter().find(|r| r.task == task && &r.model == m))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format {other}"))),
        }
    }
}

/// Machine-readable report: every score at full precision, no timing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config_hash: String,
    pub seed: u64,
    pub mode: TokenMode,
    pub tables: Vec<ReportTable>,
    pub skipped: Vec<SkippedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub task: TaskKind,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub scores: MetricReport,
    pub failures: usize,
}

impl ReportDocument {
    pub fn from_result(result: &BenchmarkResult) -> Self {
        ReportDocument {
            config_hash: result.metadata.config_hash.clone(),
            seed: result.metadata.seed,
            mode: result.metadata.mode,
            tables: result
                .tasks()
                .into_iter()
                .map(|task| ReportTable {
                    task,
                    rows: result
                        .rows(task)
                        .into_iter()
                        .map(|r| ReportRow {
                            model: r.model.clone(),
                            scores: r.report,
                            failures: r.failures,
                        })
                        .collect(),
                })
                .collect(),
            skipped: result.skipped.clone(),
        }
    }
}

pub fn render_report(result: &BenchmarkResult, format: ReportFormat) -> Result<String, Error> {
    if result.runs.is_empty() && result.skipped.is_empty() {
        return Err(Error::invalid("benchmark result is empty"));
    }
    let doc = ReportDocument::from_result(result);
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&doc)? + "\n"),
        ReportFormat::Csv => render_csv(&doc),
        ReportFormat::Markdown => Ok(render_markdown(&doc)),
    }
}

fn render_csv(doc: &ReportDocument) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task", "model"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header)?;
    for table in &doc.tables {
        for row in &table.rows {
            let mut record = vec![table.task.title().to_string(), row.model.clone()];
            record.extend(row.scores.rendered());
            w.write_record(&record)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

fn escape_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_markdown(doc: &ReportDocument) -> String {
    let mut out = String::new();
    for (i, table) in doc.tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "## {}\n", table.task.title());
        let _ = writeln!(out, "| Model | {} |", REPORT_COLUMNS.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(REPORT_COLUMNS.len()));

        let rendered: Vec<[String; 8]> = table.rows.iter().map(|r| r.scores.rendered()).collect();
        // Best per column, compared on the printed two-decimal values.
        let best: Vec<f64> = (0..REPORT_COLUMNS.len())
            .map(|c| {
                rendered
                    .iter()
                    .map(|r| r[c].parse::<f64>().unwrap_or(f64::NEG_INFINITY))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (row, cells) in table.rows.iter().zip(&rendered) {
            let _ = write!(out, "| {} |", escape_cell(&row.model));
            for (c, cell) in cells.iter().enumerate() {
                if cell.parse::<f64>().ok() == Some(best[c]) {
                    let _ = write!(out, " **{cell}** |");
                } else {
                    let _ = write!(out, " {cell} |");
                }
            }
            out.push('\n');
        }
        let failed: Vec<String> = table
            .rows
            .iter()
            .filter(|r| r.failures > 0)
            .map(|r| format!("{} {}/{}", escape_cell(&r.model), r.failures, r.scores.sample_count))
            .collect();
        if !failed.is_empty() {
            let _ = writeln!(
                out,
                "\nFailed requests (scored as empty answers): {}",
                failed.join(", ")
            );
        }
    }
    if !doc.skipped.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Skipped models:\n\n");
        for s in &doc.skipped {
            let _ = writeln!(out, "- {}: {}", escape_cell(&s.model), s.reason);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Trainer configuration
// ---------------------------------------------------------------------------

/// LoRA fine-tuning hyperparameters handed to an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: u32,
    pub finetuning_type: String,
    pub batch_size: u32,
    pub max_sequence_length: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 2e-4,
            max_epochs: 5,
            finetuning_type: "lora".to_string(),
            batch_size: 4,
            max_sequence_length: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingOverrides {
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<i64>,
    pub finetuning_type: Option<String>,
    pub batch_size: Option<i64>,
    pub max_sequence_length: Option<i64>,
}

fn positive(name: &str, value: i64) -> Result<u32, Error> {
    if value <= 0 {
        return Err(Error::invalid(format!("{name} must be positive, got {value}")));
    }
    u32::try_from(value).map_err(|_| Error::invalid(format!("{name} is too large: {value}")))
}

impl TrainingConfig {
    pub fn with_overrides(overrides: &TrainingOverrides) -> Result<Self, Error> {
        let mut cfg = TrainingConfig::default();
        if let Some(lr) = overrides.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid(format!("learning_rate must be positive, got {lr}")));
            }
            cfg.learning_rate = lr;
        }
        if let Some(v) = overrides.max_epochs {
            cfg.max_epochs = positive("max_epochs", v)?;
        }
        if let Some(t) = &overrides.finetuning_type {
            if t.trim().is_empty() {
                return Err(Error::invalid("finetuning_type must not be empty"));
            }
            cfg.finetuning_type = t.clone();
        }
        if let Some(v) = overrides.batch_size {
            cfg.batch_size = positive("batch_size", v)?;
        }
        if let Some(v) = overrides.max_sequence_length {
            cfg.max_sequence_length = positive("max_sequence_length", v)?;
        }
        Ok(cfg)
    }

    /// Flat `key=value` lines.
    pub fn to_cfg(&self) -> String {
        format!(
            "learning_rate={:e}\nmax_epochs={}\nfinetuning_type={}\nbatch_size={}\nmax_sequence_length={}\n",
            self.learning_rate, self.max_epochs, self.finetuning_type, self.batch_size, self.max_sequence_length
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("training config serializes") + "\n"
    }
}

/// Writes `train.cfg` and `train.json` into `dir`.
pub fn emit_training_config(overrides: &TrainingOverrides, dir: &Path) -> Result<(PathBuf, PathBuf), Error> {
    let cfg = TrainingConfig::with_overrides(overrides)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("train.cfg");
    let json_path = dir.join("train.json");
    std::fs::write(&cfg_path, cfg.to_cfg()).map_err(|e| Error::io(&cfg_path, e))?;
    std::fs::write(&json_path, cfg.to_json()).map_err(|e| Error::io(&json_path, e))?;
    Ok((cfg_path, json_path))
}
