//! Corpus ingestion, cleansing, deduplication and per-category statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::Error;

/// Source category of a corpus text. Mirrors the five rows of the corpus statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceCategory {
    PoliciesRegulations,
    NewsThematicReports,
    AcademicResources,
    ProjectInventory,
    JournalAbstracts,
}

impl SourceCategory {
    pub const ALL: [SourceCategory; 5] = [
        SourceCategory::PoliciesRegulations,
        SourceCategory::NewsThematicReports,
        SourceCategory::AcademicResources,
        SourceCategory::ProjectInventory,
        SourceCategory::JournalAbstracts,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceCategory::PoliciesRegulations => "PoliciesRegulations",
            SourceCategory::NewsThematicReports => "NewsThematicReports",
            SourceCategory::AcademicResources => "AcademicResources",
            SourceCategory::ProjectInventory => "ProjectInventory",
            SourceCategory::JournalAbstracts => "JournalAbstracts",
        }
    }

    /// Human-readable row label used in rendered statistics tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            SourceCategory::PoliciesRegulations => "Policies and Regulations",
            SourceCategory::NewsThematicReports => "News and Thematic Reports",
            SourceCategory::AcademicResources => "Academic resources",
            SourceCategory::ProjectInventory => "ICH Project Inventory",
            SourceCategory::JournalAbstracts => "abstracts from journal articles",
        }
    }
}

impl fmt::Display for SourceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown source category {s}")))
    }
}

/// One cleaned corpus text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub category: SourceCategory,
    pub text: String,
    pub source_path: String,
    pub token_count: usize,
}

impl Document {
    /// Builds a document from raw text, cleaning it. Returns `None` when nothing survives cleaning.
    pub fn from_raw(
        id: impl Into<String>,
        category: SourceCategory,
        raw: &str,
        source_path: impl Into<String>,
    ) -> Option<Document> {
        let text = clean_text(raw);
        if text.is_empty() {
            return None;
        }
        let token_count = count_tokens(&text);
        Some(Document {
            id: id.into(),
            category,
            text,
            source_path: source_path.into(),
            token_count,
        })
    }
}

/// A record as read from disk, before cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub category: SourceCategory,
    pub text: String,
    pub source_path: String,
}

impl RawRecord {
    pub fn clean(self) -> Option<Document> {
        Document::from_raw(self.id, self.category, &self.text, self.source_path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    /// Every regular file under the root is one document.
    PlainText,
    /// Every line of every `.jsonl` file is one `{"text": ...}` record.
    Jsonl,
}

impl FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "plain-text" | "txt" => Ok(IngestFormat::PlainText),
            "jsonl" => Ok(IngestFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown ingest format {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestDiagnostic {
    pub source_path: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub files: usize,
    pub records: usize,
    pub skipped: Vec<IngestDiagnostic>,
}

#[derive(Deserialize)]
struct JsonlInput {
    text: String,
}

/// Reads raw records below `root`. Files are visited in sorted path order; ids are
/// `<relative path>#<record index>`.
pub fn ingest_documents(
    root: &Path,
    category: SourceCategory,
    format: IngestFormat,
) -> Result<(Vec<RawRecord>, IngestReport), Error> {
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    let files: Vec<PathBuf> = if meta.is_file() {
        vec![root.to_path_buf()]
    } else {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Invalid(format!("walking {}: {e}", root.display())))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let path = entry.into_path();
            let keep = match format {
                IngestFormat::PlainText => true,
                IngestFormat::Jsonl => path.extension().is_some_and(|e| e == "jsonl"),
            };
            if keep {
                files.push(path);
            }
        }
        files
    };

    let base = if meta.is_file() {
        root.parent().unwrap_or(Path::new(""))
    } else {
        root
    };
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for path in files {
        let rel = path
            .strip_prefix(base)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        report.files += 1;
        match format {
            IngestFormat::PlainText => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                records.push(RawRecord {
                    id: format!("{rel}#0"),
                    category,
                    text,
                    source_path: rel,
                });
            }
            IngestFormat::Jsonl => {
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                for (idx, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<JsonlInput>(&line) {
                        Ok(input) => records.push(RawRecord {
                            id: format!("{rel}#{idx}"),
                            category,
                            text: input.text,
                            source_path: rel.clone(),
                        }),
                        Err(e) => report.skipped.push(IngestDiagnostic {
                            source_path: rel.clone(),
                            line: idx + 1,
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }
    }
    report.records = records.len();
    Ok((records, report))
}

// Element names recognised as residual markup by `clean_text`.
const HTML_ELEMENTS: &[&str] = &[
    "a",
    "abbr",
    "address",
    "area",
    "article",
    "aside",
    "audio",
    "b",
    "base",
    "bdi",
    "bdo",
    "blockquote",
    "body",
    "br",
    "button",
    "canvas",
    "caption",
    "center",
    "cite",
    "code",
    "col",
    "colgroup",
    "data",
    "dd",
    "del",
    "details",
    "dfn",
    "dialog",
    "div",
    "dl",
    "dt",
    "em",
    "embed",
    "fieldset",
    "figcaption",
    "figure",
    "font",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "head",
    "header",
    "hr",
    "html",
    "i",
    "iframe",
    "img",
    "input",
    "ins",
    "kbd",
    "label",
    "legend",
    "li",
    "link",
    "main",
    "map",
    "mark",
    "meta",
    "nav",
    "noscript",
    "object",
    "ol",
    "optgroup",
    "option",
    "output",
    "p",
    "param",
    "picture",
    "pre",
    "q",
    "s",
    "samp",
    "script",
    "section",
    "select",
    "small",
    "source",
    "span",
    "strike",
    "strong",
    "style",
    "sub",
    "summary",
    "sup",
    "table",
    "tbody",
    "td",
    "template",
    "textarea",
    "tfoot",
    "th",
    "thead",
    "time",
    "title",
    "tr",
    "track",
    "u",
    "ul",
    "var",
    "video",
    "wbr",
];

static HTML_TAG: LazyLock<Regex> = LazyLock::new(|| {
    let names = HTML_ELEMENTS.join("|");
    Regex::new(&format!(r"(?i)<\s*/?\s*(?:{names})(?:\s[^<>]*)?/?\s*>")).expect("valid tag regex")
});

/// Rule-based cleansing. Rules run in this order:
///
/// 1. full-width digits and Latin letters map to ASCII (other full-width forms and CJK
///    punctuation are kept);
/// 2. control characters are removed, except whitespace controls, which step 5 collapses;
/// 3. NFC normalization;
/// 4. known HTML tags are replaced by a space, repeated until none remain;
/// 5. whitespace runs collapse to one space and the ends are trimmed.
///
/// An empty result means the document should be dropped.
pub fn clean_text(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(fold_full_width)
        .filter(|c| !c.is_control() || c.is_whitespace())
        .nfc()
        .collect();

    let mut text = mapped;
    loop {
        let replaced = HTML_TAG.replace_all(&text, " ");
        if replaced.len() == text.len() && replaced == text {
            break;
        }
        text = replaced.into_owned();
    }

    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn fold_full_width(c: char) -> char {
    match c {
        '\u{FF10}'..='\u{FF19}' | '\u{FF21}'..='\u{FF3A}' | '\u{FF41}'..='\u{FF5A}' => {
            char::from_u32(c as u32 - 0xFEE0).unwrap_or(c)
        }
        _ => c,
    }
}

/// CJK ideographs, including the compatibility block and the supplementary-plane extensions.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3400}'..='\u{4DBF}'
        | '\u{4E00}'..='\u{9FFF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{20000}'..='\u{2EBEF}'
        | '\u{2F800}'..='\u{2FA1F}'
        | '\u{30000}'..='\u{323AF}')
}

/// Token count: one per CJK code point, one per maximal ASCII-alphanumeric run, one per any
/// other non-whitespace code point.
pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_run = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if !in_run {
                count += 1;
                in_run = true;
            }
            continue;
        }
        in_run = false;
        if c.is_whitespace() {
            continue;
        }
        // CJK and every other visible code point both count once.
        count += 1;
    }
    count
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DedupReport {
    /// `(kept_id, dropped_id)` for every removed document.
    pub removed: Vec<(String, String)>,
}

/// Removes exact-duplicate texts, keeping the first occurrence and the input order.
pub fn deduplicate(documents: Vec<Document>) -> (Vec<Document>, DedupReport) {
    let mut first_seen: HashMap<String, String> = HashMap::new();
    let mut report = DedupReport::default();
    let mut kept = Vec::with_capacity(documents.len());
    for doc in documents {
        match first_seen.get(&doc.text) {
            Some(kept_id) => report.removed.push((kept_id.clone(), doc.id)),
            None => {
                first_seen.insert(doc.text.clone(), doc.id.clone());
                kept.push(doc);
            }
        }
    }
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: SourceCategory,
    pub num_tokens: u64,
    pub num_texts: u64,
    pub avg_length: f64,
    pub max_length: u64,
    pub min_length: u64,
}

#[derive(Debug, Clone, Copy)]
struct Tally {
    tokens: u64,
    texts: u64,
    max: u64,
    min: u64,
}

/// Streaming accumulator behind [`compute_stats`]; also usable on bare `(category, length)`
/// observations when materialising documents is unnecessary.
#[derive(Debug, Default, Clone)]
pub struct StatsAccumulator {
    tallies: BTreeMap<SourceCategory, Tally>,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, category: SourceCategory, token_count: u64) {
        self.tallies
            .entry(category)
            .and_modify(|t| {
                t.tokens += token_count;
                t.texts += 1;
                t.max = t.max.max(token_count);
                t.min = t.min.min(token_count);
            })
            .or_insert(Tally {
                tokens: token_count,
                texts: 1,
                max: token_count,
                min: token_count,
            });
    }

    /// Rows in category order.
    pub fn finish(&self) -> Vec<CategoryStats> {
        self.tallies
            .iter()
            .map(|(&category, t)| CategoryStats {
                category,
                num_tokens: t.tokens,
                num_texts: t.texts,
                avg_length: t.tokens as f64 / t.texts as f64,
                max_length: t.max,
                min_length: t.min,
            })
            .collect()
    }
}

pub fn compute_stats(documents: &[Document]) -> Vec<CategoryStats> {
    let mut acc = StatsAccumulator::new();
    for doc in documents {
        acc.observe(doc.category, doc.token_count as u64);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for StatsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(StatsFormat::Table),
            "csv" => Ok(StatsFormat::Csv),
            "json" => Ok(StatsFormat::Json),
            other => Err(Error::invalid(format!("unknown stats format {other}"))),
        }
    }
}

/// Renders statistics; averages are printed with two decimals in the table and csv forms.
pub fn render_stats(rows: &[CategoryStats], format: StatsFormat) -> Result<String, Error> {
    match format {
        StatsFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        StatsFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "category",
                "num_tokens",
                "num_texts",
                "avg_length",
                "max_length",
                "min_length",
            ])?;
            for r in rows {
                w.write_record([
                    r.category.as_str().to_string(),
                    r.num_tokens.to_string(),
                    r.num_texts.to_string(),
                    format!("{:.2}", r.avg_length),
                    r.max_length.to_string(),
                    r.min_length.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
        }
        StatsFormat::Table => {
            let mut out = String::new();
            out.push_str("| Category | Num of tokens | Num of texts | Avg. length | Max length | Min length |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:.2} | {} | {} |\n",
                    r.category.display_name(),
                    r.num_tokens,
                    r.num_texts,
                    r.avg_length,
                    r.max_length,
                    r.min_length
                ));
            }
            Ok(out)
        }
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, Error> {
    crate::jsonl::read(path)
}

pub fn write_corpus(path: &Path, documents: &[Document]) -> Result<(), Error> {
    crate::jsonl::write(path, documents)
}
