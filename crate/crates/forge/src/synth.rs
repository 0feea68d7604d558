//! QA-pair synthesis: prompt a model over source texts and turn its replies into Pending samples.

use forge_core::instruct::{
    excerpt, parse_qa_response, samples_from_pairs, InstructionFrames, InstructionSample, PromptTemplate,
    SynthesisDiagnostic, TaskKind,
};
use futures::stream::{self, StreamExt};

use crate::client::{ChatClient, ChatMessage, ClientError, EndpointConfig};

const EXCERPT_CHARS: usize = 200;

/// One source document to synthesize from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceText {
    pub doc_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub template: PromptTemplate,
    pub task: TaskKind,
    pub frames: InstructionFrames,
    pub max_pairs: usize,
    /// Sources in flight at once.
    pub concurrency: usize,
}

impl SynthesisOptions {
    pub fn new(template: PromptTemplate, max_pairs: usize) -> Self {
        SynthesisOptions {
            template,
            task: TaskKind::KnowledgeQA,
            frames: InstructionFrames::chinese(),
            max_pairs,
            concurrency: crate::client::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisOutput {
    pub samples: Vec<InstructionSample>,
    pub diagnostics: Vec<SynthesisDiagnostic>,
}

/// Sends one request for `source` and converts the reply. A reply that is not a JSON array of
/// question/answer objects gives zero samples and one diagnostic. A request that fails after
/// retries is an error.
pub async fn synthesize_qa_pairs(
    client: &ChatClient,
    endpoint: &EndpointConfig,
    source: &SourceText,
    opts: &SynthesisOptions,
) -> Result<SynthesisOutput, ClientError> {
    if source.text.trim().is_empty() {
        return Err(ClientError::InvalidRequest("source text is empty".into()));
    }
    let mut messages = Vec::new();
    if let Some(system) = &endpoint.system_prompt {
        messages.push(ChatMessage::system(system));
    }
    messages.push(ChatMessage::user(opts.template.render(&source.text)));
    let exchange = client.chat_complete(endpoint, messages).await?;
    let doc_id = source.doc_id.as_deref();
    let diagnostic = |message: String| SynthesisDiagnostic {
        source_doc_id: source.doc_id.clone(),
        request_id: Some(exchange.request_id.clone()),
        message,
        response_excerpt: excerpt(&exchange.response_text, EXCERPT_CHARS),
    };
    let pairs = match parse_qa_response(&exchange.response_text) {
        Ok(p) => p,
        Err(message) => {
            return Ok(SynthesisOutput {
                samples: Vec::new(),
                diagnostics: vec![diagnostic(message)],
            })
        }
    };
    match samples_from_pairs(&pairs, opts.task, &source.text, doc_id, opts.frames, opts.max_pairs) {
        Ok(samples) => Ok(SynthesisOutput {
            samples,
            diagnostics: Vec::new(),
        }),
        Err(e) => Ok(SynthesisOutput {
            samples: Vec::new(),
            diagnostics: vec![diagnostic(e.to_string())],
        }),
    }
}

/// Runs synthesis over many sources with bounded parallelism. Request failures become
/// diagnostics so one bad source does not stop the batch. Output order follows the input
/// order, whatever order replies arrive in; a sample id already produced is dropped.
pub async fn synthesize_batch(
    client: &ChatClient,
    endpoint: &EndpointConfig,
    sources: &[SourceText],
    opts: &SynthesisOptions,
) -> SynthesisOutput {
    let results: Vec<(usize, Result<SynthesisOutput, ClientError>)> = stream::iter(sources.iter().enumerate())
        .map(|(i, src)| async move { (i, synthesize_qa_pairs(client, endpoint, src, opts).await) })
        .buffer_unordered(opts.concurrency.max(1))
        .collect()
        .await;
    let mut results = results;
    results.sort_by_key(|(i, _)| *i);

    let mut out = SynthesisOutput::default();
    let mut seen = std::collections::HashSet::new();
    for (i, result) in results {
        match result {
            Ok(part) => {
                out.samples
                    .extend(part.samples.into_iter().filter(|s| seen.insert(s.id.clone())));
                out.diagnostics.extend(part.diagnostics);
            }
            Err(e) => out.diagnostics.push(SynthesisDiagnostic {
                source_doc_id: sources[i].doc_id.clone(),
                request_id: e.request_id().map(str::to_string),
                message: e.to_string(),
                response_excerpt: String::new(),
            }),
        }
    }
    out
}
