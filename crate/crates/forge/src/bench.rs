//! Benchmark runner: query each endpoint on each eval set and score the replies.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use forge_core::bench::{
    render_report, BenchmarkResult, ReportFormat, RunMetadata, SampleResponse, SkippedModel, TaskRun,
};
use forge_core::instruct::{read_samples, InstructionSample, TaskKind};
use forge_core::metrics::{evaluate_corpus, MetricError, TokenMode};

use crate::client::{ChatClient, ChatMessage, EndpointConfig, DEFAULT_MAX_IN_FLIGHT};

const PREFLIGHT_PROMPT: &str = "ping";

fn default_concurrency() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

/// Contents of `bench.json`. Relative eval-set paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub endpoints: Vec<EndpointConfig>,
    pub eval_sets: BTreeMap<TaskKind, PathBuf>,
    #[serde(default, alias = "tokenization_mode")]
    pub mode: TokenMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Requests in flight per (model, task).
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] forge_core::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no endpoint passed the preflight check: {}", .0.iter().map(|s| format!("{} ({})", s.model, s.reason)).collect::<Vec<_>>().join("; "))]
    AllUnreachable(Vec<SkippedModel>),
}

impl BenchmarkConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: BenchmarkConfig =
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in config.eval_sets.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// sha256 over the canonical JSON form of the config. API keys are never serialized, so
    /// the hash does not depend on credentials.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        for p in canonical.eval_sets.values_mut() {
            if let Some(name) = p.file_name() {
                *p = PathBuf::from(name);
            }
        }
        canonical.output_dir = None;
        hex::encode(Sha256::digest(
            serde_json::to_vec(&canonical).expect("config serializes"),
        ))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.endpoints.is_empty() {
            return Err(BenchError::Config("at least one endpoint is required".into()));
        }
        if self.eval_sets.is_empty() {
            return Err(BenchError::Config("at least one eval set is required".into()));
        }
        let mut names = HashSet::new();
        for ep in &self.endpoints {
            ep.validate().map_err(|e| BenchError::Config(e.to_string()))?;
            let name = display_name(ep);
            if !names.insert(name.to_string()) {
                return Err(BenchError::Config(format!("duplicate endpoint name {name}")));
            }
        }
        for (task, path) in &self.eval_sets {
            if !path.is_file() {
                return Err(BenchError::Config(format!(
                    "eval set for {task} not found: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

fn display_name(ep: &EndpointConfig) -> &str {
    if ep.name.is_empty() {
        &ep.model
    } else {
        &ep.name
    }
}

/// Reads an eval set, checking every sample belongs to `task` and ids are unique. Returns
/// samples ordered by id.
pub fn load_eval_set(task: TaskKind, path: &Path) -> Result<Vec<InstructionSample>, BenchError> {
    let mut samples = read_samples(path)?;
    let mut ids = HashSet::new();
    for s in &samples {
        if s.task != task {
            return Err(BenchError::Config(format!(
                "{}: sample {} has task {}, expected {task}",
                path.display(),
                s.id,
                s.task
            )));
        }
        if !ids.insert(s.id.as_str()) {
            return Err(BenchError::Config(format!(
                "{}: duplicate sample id {}",
                path.display(),
                s.id
            )));
        }
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

fn messages_for(endpoint: &EndpointConfig, sample: &InstructionSample) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = &endpoint.system_prompt {
        messages.push(ChatMessage::system(system));
    }
    messages.push(ChatMessage::user(sample.prompt_text()));
    messages
}

async fn run_task(
    client: &ChatClient,
    endpoint: &EndpointConfig,
    task: TaskKind,
    samples: &[InstructionSample],
    mode: TokenMode,
    concurrency: usize,
) -> Result<TaskRun, BenchError> {
    let mut responses: Vec<SampleResponse> = stream::iter(samples)
        .map(|sample| async move {
            let reference = sample.effective_output().to_string();
            match client.chat_complete(endpoint, messages_for(endpoint, sample)).await {
                Ok(exchange) => SampleResponse {
                    sample_id: sample.id.clone(),
                    candidate: exchange.response_text,
                    reference,
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(model = %endpoint.model, sample = %sample.id, error = %e, "request failed; scoring as empty");
                    SampleResponse {
                        sample_id: sample.id.clone(),
                        candidate: String::new(),
                        reference,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    responses.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let pairs: Vec<(&str, &str)> = responses
        .iter()
        .map(|r| (r.candidate.as_str(), r.reference.as_str()))
        .collect();
    let report = evaluate_corpus(&pairs, mode)?;
    Ok(TaskRun {
        model: display_name(endpoint).to_string(),
        task,
        report,
        failures: responses.iter().filter(|r| r.error.is_some()).count(),
        responses,
    })
}

/// Runs every endpoint over every eval set. Endpoints failing the preflight request are
/// skipped and listed in the result; if all fail the run is an error.
pub async fn run_benchmark(client: &ChatClient, config: &BenchmarkConfig) -> Result<BenchmarkResult, BenchError> {
    config.validate()?;
    let mut eval_sets = Vec::new();
    for (&task, path) in &config.eval_sets {
        let samples = load_eval_set(task, path)?;
        if samples.is_empty() {
            return Err(BenchError::Config(format!("eval set for {task} is empty")));
        }
        eval_sets.push((task, samples));
    }

    let mut result = BenchmarkResult {
        metadata: RunMetadata {
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config_hash: config.hash(),
            seed: config.seed,
            mode: config.mode,
        },
        models: Vec::new(),
        runs: Vec::new(),
        skipped: Vec::new(),
    };
    for ep in &config.endpoints {
        let mut endpoint = ep.clone().with_env_defaults();
        endpoint.seed = endpoint.seed.or(Some(config.seed));
        let name = display_name(&endpoint).to_string();
        result.models.push(name.clone());
        if let Err(e) = client
            .chat_complete(&endpoint, vec![ChatMessage::user(PREFLIGHT_PROMPT)])
            .await
        {
            tracing::warn!(model = %name, error = %e, "preflight failed; skipping model");
            result.skipped.push(SkippedModel {
                model: name,
                reason: format!("preflight failed: {}", e.detail()),
            });
            continue;
        }
        for (task, samples) in &eval_sets {
            tracing::info!(model = %name, %task, samples = samples.len(), "running task");
            result
                .runs
                .push(run_task(client, &endpoint, *task, samples, config.mode, config.concurrency).await?);
        }
    }
    if result.skipped.len() == config.endpoints.len() {
        return Err(BenchError::AllUnreachable(result.skipped));
    }
    Ok(result)
}

/// Writes `run.json` plus the report in every format. Returns the written paths.
pub fn write_outputs(result: &BenchmarkResult, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = vec![(
        dir.join("run.json"),
        serde_json::to_string_pretty(result).map_err(forge_core::Error::from)? + "\n",
    )];
    for (name, format) in [
        ("report.md", ReportFormat::Markdown),
        ("report.csv", ReportFormat::Csv),
        ("report.json", ReportFormat::Json),
    ] {
        files.push((dir.join(name), render_report(result, format)?));
    }
    let mut written = Vec::new();
    for (path, body) in files {
        std::fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
