//! Instruction samples for the three task families, synthetic QA ingestion, export and eval
//! splits.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    KnowledgeQA,
    ContextQA,
    TermInterpretation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::KnowledgeQA, TaskKind::ContextQA, TaskKind::TermInterpretation];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::KnowledgeQA => "KnowledgeQA",
            TaskKind::ContextQA => "ContextQA",
            TaskKind::TermInterpretation => "TermInterpretation",
        }
    }

    /// Title used for report tables.
    pub fn title(&self) -> &'static str {
        match self {
            TaskKind::KnowledgeQA => "Knowledge Q&A",
            TaskKind::ContextQA => "Context-aware Knowledge Q&A",
            TaskKind::TermInterpretation => "Terminology Interpretation",
        }
    }

    fn id_prefix(&self) -> &'static str {
        match self {
            TaskKind::KnowledgeQA => "kqa",
            TaskKind::ContextQA => "cqa",
            TaskKind::TermInterpretation => "term",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown task {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Template,
    Synthetic,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReviewState {
    Pending,
    Accepted,
    Edited,
    Rejected,
}

impl ReviewState {
    pub const ALL: [ReviewState; 4] = [
        ReviewState::Pending,
        ReviewState::Accepted,
        ReviewState::Edited,
        ReviewState::Rejected,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReviewState::Pending => "Pending",
            ReviewState::Accepted => "Accepted",
            ReviewState::Edited => "Edited",
            ReviewState::Rejected => "Rejected",
        }
    }

    /// Parses a comma-separated list such as `accepted,edited` (case-insensitive).
    pub fn parse_set(list: &str) -> Result<BTreeSet<ReviewState>, Error> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for ReviewState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReviewState::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown review state {s}")))
    }
}

/// One instruction-tuning or evaluation record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub task: TaskKind,
    pub instruction: String,
    pub context: Option<String>,
    pub output: String,
    pub provenance: Provenance,
    pub source_doc_id: Option<String>,
    pub review_state: ReviewState,
    pub edited_output: Option<String>,
}

impl InstructionSample {
    /// The reviewed answer: the edit when one exists, the original output otherwise.
    pub fn effective_output(&self) -> &str {
        match (&self.review_state, &self.edited_output) {
            (ReviewState::Edited, Some(edit)) => edit,
            _ => &self.output,
        }
    }

    /// The single user message sent to a model for this sample. Context questions get the
    /// material spliced in under the reference marker.
    pub fn prompt_text(&self) -> String {
        match (&self.task, &self.context) {
            (TaskKind::ContextQA, Some(context)) => {
                for frames in [InstructionFrames::chinese(), InstructionFrames::english()] {
                    if let Some(rest) = self.instruction.strip_prefix(frames.material_marker) {
                        return format!("{}\n{context}{rest}", frames.material_marker);
                    }
                }
                format!("{context}\n{}", self.instruction)
            }
            _ => self.instruction.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let fail = |m: &str| Err(Error::invalid(format!("sample {}: {m}", self.id)));
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.instruction.trim().is_empty() {
            return fail("empty instruction");
        }
        if self.output.trim().is_empty() {
            return fail("empty output");
        }
        match (self.task, &self.context) {
            (TaskKind::ContextQA, Some(c)) if !c.trim().is_empty() => {}
            (TaskKind::ContextQA, _) => return fail("context questions need a non-empty context"),
            (_, Some(_)) => return fail("only context questions carry a context"),
            (_, None) => {}
        }
        match (self.review_state, &self.edited_output) {
            (ReviewState::Edited, Some(e)) if !e.trim().is_empty() => {}
            (ReviewState::Edited, _) => return fail("edited samples need a non-empty edited_output"),
            (_, Some(_)) => return fail("edited_output present on a sample that is not Edited"),
            (_, None) => {}
        }
        Ok(())
    }
}

/// Fixed instruction wording for the context and terminology tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionFrames {
    pub material_marker: &'static str,
    pub context_directive: &'static str,
    pub term_persona: &'static str,
}

impl InstructionFrames {
    pub const fn chinese() -> Self {
        InstructionFrames {
            material_marker: "<参考资料>",
            context_directive: "请根据所提供的内容回答以下问题，并确保输出严格来源于给定材料：",
            term_persona: "作为非物质文化遗产（非遗）领域的专业学者，请简要介绍以下中国非遗项目：",
        }
    }

    pub const fn english() -> Self {
        InstructionFrames {
            material_marker: "<Reference Material>",
            context_directive: "Using the provided content, answer the following question and ensure the output strictly derives from the given material: ",
            term_persona: "As a professional scholar in Intangible Cultural Heritage (ICH), provide a concise introduction to the following Chinese ICH item: ",
        }
    }
}

impl Default for InstructionFrames {
    fn default() -> Self {
        InstructionFrames::chinese()
    }
}

fn require(field: &str, value: &str) -> Result<(), Error> {
    if value.trim().is_empty() {
        Err(Error::invalid(format!("{field} must not be empty")))
    } else {
        Ok(())
    }
}

fn content_id(
    task: TaskKind,
    instruction: &str,
    context: Option<&str>,
    output: &str,
    source_doc_id: Option<&str>,
) -> String {
    let mut h = Sha256::new();
    for part in [
        task.as_str(),
        instruction,
        context.unwrap_or(""),
        output,
        source_doc_id.unwrap_or(""),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    format!("{}-{}", task.id_prefix(), hex::encode(&digest[..8]))
}

/// Builds samples with a fixed set of frames and provenance. Ids hash the sample content and
/// source document, so the same inputs always produce the same id.
#[derive(Debug, Clone, Copy)]
pub struct SampleBuilder {
    pub frames: InstructionFrames,
    pub provenance: Provenance,
}

impl Default for SampleBuilder {
    fn default() -> Self {
        SampleBuilder {
            frames: InstructionFrames::chinese(),
            provenance: Provenance::Template,
        }
    }
}

impl SampleBuilder {
    pub fn new(frames: InstructionFrames, provenance: Provenance) -> Self {
        SampleBuilder { frames, provenance }
    }

    fn finish(
        &self,
        task: TaskKind,
        instruction: String,
        context: Option<String>,
        output: &str,
        source_doc_id: Option<&str>,
    ) -> InstructionSample {
        InstructionSample {
            id: content_id(task, &instruction, context.as_deref(), output, source_doc_id),
            task,
            instruction,
            context,
            output: output.to_string(),
            provenance: self.provenance,
            source_doc_id: source_doc_id.map(str::to_string),
            review_state: if self.provenance == Provenance::Synthetic {
                ReviewState::Pending
            } else {
                ReviewState::Accepted
            },
            edited_output: None,
        }
    }

    pub fn knowledge_qa(
        &self,
        question: &str,
        answer: &str,
        source_doc_id: Option<&str>,
    ) -> Result<InstructionSample, Error> {
        require("question", question)?;
        require("answer", answer)?;
        Ok(self.finish(TaskKind::KnowledgeQA, question.to_string(), None, answer, source_doc_id))
    }

    pub fn context_qa(
        &self,
        material: &str,
        question: &str,
        answer: &str,
        source_doc_id: Option<&str>,
    ) -> Result<InstructionSample, Error> {
        require("material", material)?;
        require("question", question)?;
        require("answer", answer)?;
        let instruction = format!(
            "{}\n{}{}",
            self.frames.material_marker, self.frames.context_directive, question
        );
        Ok(self.finish(
            TaskKind::ContextQA,
            instruction,
            Some(material.to_string()),
            answer,
            source_doc_id,
        ))
    }

    pub fn term_interpretation(
        &self,
        term: &str,
        explanation: &str,
        source_doc_id: Option<&str>,
    ) -> Result<InstructionSample, Error> {
        require("term", term)?;
        require("explanation", explanation)?;
        let instruction = format!("{}{}", self.frames.term_persona, term);
        Ok(self.finish(
            TaskKind::TermInterpretation,
            instruction,
            None,
            explanation,
            source_doc_id,
        ))
    }
}

pub fn build_knowledge_qa(
    question: &str,
    answer: &str,
    source_doc_id: Option<&str>,
) -> Result<InstructionSample, Error> {
    SampleBuilder::default().knowledge_qa(question, answer, source_doc_id)
}

pub fn build_context_qa(
    material: &str,
    question: &str,
    answer: &str,
    source_doc_id: Option<&str>,
) -> Result<InstructionSample, Error> {
    SampleBuilder::default().context_qa(material, question, answer, source_doc_id)
}

pub fn build_term_interpretation(
    term: &str,
    explanation: &str,
    source_doc_id: Option<&str>,
) -> Result<InstructionSample, Error> {
    SampleBuilder::default().term_interpretation(term, explanation, source_doc_id)
}

// ---------------------------------------------------------------------------
// Synthetic QA generation
// ---------------------------------------------------------------------------

pub const SOURCE_PLACEHOLDER: &str = "{source_text}";

/// Default QA synthesis prompt; also shipped as `prompts/qa.txt`.
pub const DEFAULT_QA_PROMPT: &str = "我要制作一批非遗领域的知识问答数据，接下来你需要根据给出的非遗领域文本，对其进行表述和格式的修改，形成一批问答数据。
请只输出一个JSON数组，数组中每个元素都是形如{\"question\": \"问题\", \"answer\": \"答案\"}的对象，不要输出任何其他内容。

非遗领域文本：
{source_text}
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, Error> {
        let body = body.into();
        let found = body.matches(SOURCE_PLACEHOLDER).count();
        if found != 1 {
            return Err(Error::invalid(format!(
                "prompt template must contain {SOURCE_PLACEHOLDER} exactly once, found {found}"
            )));
        }
        Ok(PromptTemplate {
            name: name.into(),
            body,
        })
    }

    pub fn default_qa() -> Self {
        PromptTemplate::new("qa", DEFAULT_QA_PROMPT).expect("default template has one placeholder")
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        PromptTemplate::new(name, body)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn render(&self, source_text: &str) -> String {
        self.body.replacen(SOURCE_PLACEHOLDER, source_text, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// Parses a model reply that must be a JSON array of `{"question", "answer"}` objects with
/// non-empty strings. Anything else is rejected whole.
pub fn parse_qa_response(response: &str) -> Result<Vec<QaPair>, String> {
    let pairs: Vec<QaPair> = serde_json::from_str(response.trim())
        .map_err(|e| format!("not a JSON array of question/answer objects: {e}"))?;
    if let Some(i) = pairs
        .iter()
        .position(|p| p.question.trim().is_empty() || p.answer.trim().is_empty())
    {
        return Err(format!("pair {i} has an empty question or answer"));
    }
    Ok(pairs)
}

/// Why a model reply produced no samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisDiagnostic {
    pub source_doc_id: Option<String>,
    pub request_id: Option<String>,
    pub message: String,
    pub response_excerpt: String,
}

pub fn excerpt(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => format!("{}…", &text[..cut]),
        None => text.to_string(),
    }
}

/// Turns parsed pairs into Pending synthetic samples: identical pairs collapse, at most
/// `max_pairs` survive in reply order.
pub fn samples_from_pairs(
    pairs: &[QaPair],
    task: TaskKind,
    source_text: &str,
    source_doc_id: Option<&str>,
    frames: InstructionFrames,
    max_pairs: usize,
) -> Result<Vec<InstructionSample>, Error> {
    let builder = SampleBuilder::new(frames, Provenance::Synthetic);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for pair in pairs {
        if out.len() >= max_pairs {
            break;
        }
        if !seen.insert((pair.question.as_str(), pair.answer.as_str())) {
            continue;
        }
        let sample = match task {
            TaskKind::KnowledgeQA => builder.knowledge_qa(&pair.question, &pair.answer, source_doc_id)?,
            TaskKind::ContextQA => builder.context_qa(source_text, &pair.question, &pair.answer, source_doc_id)?,
            TaskKind::TermInterpretation => builder.term_interpretation(&pair.question, &pair.answer, source_doc_id)?,
        };
        out.push(sample);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

pub fn read_samples(path: &Path) -> Result<Vec<InstructionSample>, Error> {
    crate::jsonl::read(path)
}

pub fn write_samples(path: &Path, samples: &[InstructionSample]) -> Result<(), Error> {
    crate::jsonl::write(path, samples)
}

/// The exported form of a sample: Edited samples carry the edit as `output`.
pub fn exported(sample: &InstructionSample) -> InstructionSample {
    let mut out = sample.clone();
    if sample.review_state == ReviewState::Edited {
        out.output = sample.effective_output().to_string();
    }
    out
}

/// Selects samples in `include`, sorts them by id and renders them as JSON lines.
/// Fails if two selected samples share an id.
pub fn export_lines(samples: &[InstructionSample], include: &BTreeSet<ReviewState>) -> Result<(String, usize), Error> {
    let mut selected: Vec<InstructionSample> = samples
        .iter()
        .filter(|s| include.contains(&s.review_state))
        .map(exported)
        .collect();
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = selected.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::invalid(format!("duplicate sample id {}", w[0].id)));
    }
    Ok((crate::jsonl::to_string(&selected)?, selected.len()))
}

pub fn export_dataset(
    samples: &[InstructionSample],
    include: &BTreeSet<ReviewState>,
    path: &Path,
) -> Result<usize, Error> {
    let (lines, count) = export_lines(samples, include)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, lines).map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// Seeded selection of `size` reviewed (Accepted or Edited) samples of one task, without
/// replacement, returned in id order.
pub fn make_eval_split(
    samples: &[InstructionSample],
    task: TaskKind,
    size: usize,
    seed: u64,
) -> Result<Vec<InstructionSample>, Error> {
    let mut pool: Vec<&InstructionSample> = samples
        .iter()
        .filter(|s| s.task == task && matches!(s.review_state, ReviewState::Accepted | ReviewState::Edited))
        .collect();
    if pool.len() < size {
        return Err(Error::invalid(format!("need {size}, have {}", pool.len())));
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<InstructionSample> = index::sample(&mut rng, pool.len(), size)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}
