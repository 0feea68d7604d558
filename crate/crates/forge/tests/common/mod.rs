//! Scriptable OpenAI-style chat server for tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use forge::client::EndpointConfig;

pub enum Reply {
    Text(String),
    Status(u16, String),
    /// A 200 with this exact body.
    Raw(String),
}

pub struct MockRequest {
    /// 0-based index of this request among all requests the server has seen.
    pub index: usize,
    pub last_user: String,
    pub body: Value,
    pub authorization: Option<String>,
}

type Handler = dyn Fn(&MockRequest) -> Reply + Send + Sync;

#[derive(Clone)]
struct MockState {
    handler: Arc<Handler>,
    hits: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    delay: Duration,
    requests: Arc<Mutex<Vec<Value>>>,
}

pub struct MockLlm {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<Value>>>,
}

impl MockLlm {
    pub async fn spawn(handler: impl Fn(&MockRequest) -> Reply + Send + Sync + 'static) -> Self {
        Self::spawn_with_delay(Duration::ZERO, handler).await
    }

    pub async fn spawn_with_delay(
        delay: Duration,
        handler: impl Fn(&MockRequest) -> Reply + Send + Sync + 'static,
    ) -> Self {
        let state = MockState {
            handler: Arc::new(handler),
            hits: Arc::default(),
            in_flight: Arc::default(),
            peak: Arc::default(),
            delay,
            requests: Arc::default(),
        };
        let out = MockLlm {
            base_url: String::new(),
            hits: state.hits.clone(),
            peak: state.peak.clone(),
            requests: state.requests.clone(),
        };
        let app = Router::new()
            .route("/v1/chat/completions", post(complete))
            .with_state(state);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        MockLlm {
            base_url: format!("http://{addr}/v1"),
            ..out
        }
    }

    /// Echoes the last user message.
    pub async fn echo() -> Self {
        Self::spawn(|r| Reply::Text(r.last_user.clone())).await
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    /// Endpoint with millisecond backoff so retry tests stay fast.
    pub fn endpoint(&self, name: &str) -> EndpointConfig {
        let mut cfg = EndpointConfig::new(&self.base_url, name);
        cfg.backoff_base_ms = 1;
        cfg.timeout_seconds = 10;
        cfg
    }
}

pub fn completion_body(text: &str) -> Value {
    json!({
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
}

async fn complete(State(state): State<MockState>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let index = state.hits.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak.fetch_max(now, Ordering::SeqCst);
    state.requests.lock().unwrap().push(body.clone());
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    let last_user = body["messages"]
        .as_array()
        .and_then(|ms| ms.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let req = MockRequest {
        index,
        last_user,
        body,
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    };
    let reply = (state.handler)(&req);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        Reply::Text(t) => Json(completion_body(&t)).into_response(),
        Reply::Status(code, body) => (StatusCode::from_u16(code).unwrap(), body).into_response(),
        Reply::Raw(body) => (StatusCode::OK, [("content-type", "application/json")], body).into_response(),
    }
}

/// A base URL nothing listens on.
pub async fn dead_base_url() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}

#[derive(serde::Deserialize)]
pub struct FixtureSource {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub reply: Option<Value>,
    #[serde(default)]
    pub reply_text: Option<String>,
}

impl FixtureSource {
    pub fn reply_body(&self) -> String {
        match (&self.reply, &self.reply_text) {
            (Some(v), _) => v.to_string(),
            (None, Some(t)) => t.clone(),
            (None, None) => "[]".into(),
        }
    }
}

#[derive(serde::Deserialize)]
pub struct SynthFixture {
    pub sources: Vec<FixtureSource>,
    pub malformed: FixtureSource,
}

pub fn synth_fixture() -> SynthFixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/synthetic_qa.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Replays the fixture: the reply for whichever fixture text appears in the prompt.
pub async fn replay_server(fixture: &SynthFixture) -> MockLlm {
    let table: Vec<(String, String)> = fixture
        .sources
        .iter()
        .chain(std::iter::once(&fixture.malformed))
        .map(|s| (s.text.clone(), s.reply_body()))
        .collect();
    MockLlm::spawn(
        move |r| match table.iter().find(|(text, _)| r.last_user.contains(text.as_str())) {
            Some((_, reply)) => Reply::Text(reply.clone()),
            None => Reply::Status(400, "unknown source".into()),
        },
    )
    .await
}

pub mod bench {
    use std::collections::HashMap;
    use std::path::{Path, PathBuf};

    use forge::bench::BenchmarkConfig;
    use forge_core::instruct::{
        build_context_qa, build_knowledge_qa, build_term_interpretation, write_samples, InstructionSample, TaskKind,
    };

    use super::{synth_fixture, MockLlm, Reply};

    pub const Q1: &str = "苗族古歌的主要演唱场合有哪些?";
    pub const A1: &str = "苗族古歌古词神话大多在鼓社祭、婚丧活动、亲友聚会和节日等场合演唱, 演唱者多为中老年人、巫师、歌手等。酒席是演唱古歌的重要场合。";
    pub const TERM_A: &str = "苗族古歌内容包罗万象, 从宇宙的诞生、人类和物种的起源、开天辟地、初民时期的滔天洪水...今天, 这些古歌古词神话还在民间流传唱诵。";

    pub fn eval_sets() -> Vec<(TaskKind, Vec<InstructionSample>)> {
        let fx = synth_fixture();
        let pairs: Vec<(String, String)> = fx
            .sources
            .iter()
            .map(|s| {
                let r = &s.reply.as_ref().unwrap()[0];
                (
                    r["question"].as_str().unwrap().to_string(),
                    r["answer"].as_str().unwrap().to_string(),
                )
            })
            .collect();
        let mut kqa = vec![build_knowledge_qa(Q1, A1, None).unwrap()];
        kqa.extend(pairs.iter().map(|(q, a)| build_knowledge_qa(q, a, None).unwrap()));
        let cqa = vec![
            build_context_qa(A1, Q1, A1, None).unwrap(),
            build_context_qa(&pairs[1].1, &pairs[1].0, &pairs[1].1, None).unwrap(),
        ];
        let term = vec![
            build_term_interpretation("苗族古歌", TERM_A, None).unwrap(),
            build_term_interpretation("缂丝", &pairs[1].1, None).unwrap(),
            build_term_interpretation("布洛陀", &pairs[2].1, None).unwrap(),
        ];
        vec![
            (TaskKind::KnowledgeQA, kqa),
            (TaskKind::ContextQA, cqa),
            (TaskKind::TermInterpretation, term),
        ]
    }

    pub fn references(sets: &[(TaskKind, Vec<InstructionSample>)]) -> HashMap<String, String> {
        sets.iter()
            .flat_map(|(_, s)| s)
            .map(|s| (s.prompt_text(), s.effective_output().to_string()))
            .collect()
    }

    /// Replies with the reference for known prompts, `transform`ed.
    pub async fn reference_model(refs: HashMap<String, String>, transform: fn(&str) -> String) -> MockLlm {
        MockLlm::spawn(move |r| match refs.get(&r.last_user) {
            Some(reference) => Reply::Text(transform(reference)),
            None => Reply::Text("pong".into()),
        })
        .await
    }

    pub fn first_half(s: &str) -> String {
        let n = s.chars().count();
        s.chars().take(n / 2).collect()
    }

    pub struct Fixture {
        pub config_path: PathBuf,
        pub config: BenchmarkConfig,
        pub sets: Vec<(TaskKind, Vec<InstructionSample>)>,
        pub mocks: Vec<MockLlm>,
    }

    /// Writes eval sets and a config with four deterministic models: identity, half, echo, empty.
    pub async fn fixture(dir: &Path) -> Fixture {
        let sets = eval_sets();
        let mut eval_paths = serde_json::Map::new();
        for (task, samples) in &sets {
            let name = format!("{}.jsonl", task.as_str());
            write_samples(&dir.join(&name), samples).unwrap();
            eval_paths.insert(task.as_str().into(), name.into());
        }
        let refs = references(&sets);
        let mocks = vec![
            reference_model(refs.clone(), |s| s.to_string()).await,
            reference_model(refs, first_half).await,
            MockLlm::echo().await,
            MockLlm::spawn(|_| Reply::Text(String::new())).await,
        ];
        let endpoints: Vec<_> = ["identity", "half", "echo", "empty"]
            .iter()
            .zip(&mocks)
            .map(|(name, m)| serde_json::json!({"name": name, "base_url": m.base_url, "model": format!("mock-{name}"), "backoff_base_ms": 1}))
            .collect();
        let config_json = serde_json::json!({
            "endpoints": endpoints,
            "eval_sets": eval_paths,
            "mode": "char",
            "seed": 7
        });
        let config_path = dir.join("bench.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&config_json).unwrap()).unwrap();
        let config = BenchmarkConfig::load(&config_path).unwrap();
        Fixture {
            config_path,
            config,
            sets,
            mocks,
        }
    }
}
