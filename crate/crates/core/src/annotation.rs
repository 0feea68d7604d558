//! Inline entity markup (`<ICH-TITLE>苗族古歌</ICH-TITLE>`) and `surface/tag` POS lines.
//!
//! Span offsets are Unicode code points into the plain text, never bytes.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityLabel {
    #[serde(rename = "ICH-TITLE")]
    Title,
    #[serde(rename = "ICH-PLACE")]
    Place,
    #[serde(rename = "ICH-TERM")]
    Term,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 3] = [EntityLabel::Title, EntityLabel::Place, EntityLabel::Term];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityLabel::Title => "ICH-TITLE",
            EntityLabel::Place => "ICH-PLACE",
            EntityLabel::Term => "ICH-TERM",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown label {s}")))
    }
}

/// Half-open code-point range `[start, end)` carrying a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: EntityLabel) -> Self {
        Self { start, end, label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosToken {
    pub surface: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub entities: Vec<EntitySpan>,
    pub pos_tokens: Option<Vec<PosToken>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkupError {
    #[error("unknown label {label} at byte {offset}")]
    UnknownLabel { label: String, offset: usize },
    #[error("nested tag <{inner}> inside <{outer}> at byte {offset}")]
    Nested {
        outer: EntityLabel,
        inner: EntityLabel,
        offset: usize,
    },
    #[error("closing tag </{found}> does not match <{expected}> at byte {offset}")]
    Mismatched {
        expected: EntityLabel,
        found: EntityLabel,
        offset: usize,
    },
    #[error("closing tag </{label}> without an open tag at byte {offset}")]
    UnexpectedClose { label: EntityLabel, offset: usize },
    #[error("tag <{label}> opened at byte {offset} is never closed")]
    Unclosed { label: EntityLabel, offset: usize },
    #[error("unterminated tag at byte {offset}")]
    UnterminatedTag { offset: usize },
    #[error("empty <{label}> entity at byte {offset}")]
    EmptyEntity { label: EntityLabel, offset: usize },
    #[error("invalid escape at byte {offset} (only &lt; and &amp; are allowed)")]
    InvalidEscape { offset: usize },
}

/// Parses inline markup into plain text plus entity spans. The returned document has an empty
/// `doc_id` and no POS tokens.
pub fn parse_annotated_text(markup: &str) -> Result<AnnotatedDocument, MarkupError> {
    let mut text = String::with_capacity(markup.len());
    let mut entities = Vec::new();
    let mut cursor = 0usize; // code points emitted so far
    let mut open: Option<(EntityLabel, usize, usize)> = None; // label, start code point, byte offset
    let mut pos = 0usize;

    while pos < markup.len() {
        let rest = &markup[pos..];
        let c = rest.chars().next().expect("pos is on a char boundary");
        match c {
            '<' => {
                let close = rest.find('>').ok_or(MarkupError::UnterminatedTag { offset: pos })?;
                let inner = &rest[1..close];
                let (closing, name) = match inner.strip_prefix('/') {
                    Some(name) => (true, name),
                    None => (false, inner),
                };
                let label: EntityLabel = name.parse().map_err(|_| MarkupError::UnknownLabel {
                    label: name.to_string(),
                    offset: pos,
                })?;
                if closing {
                    let (expected, start, _) =
                        open.take().ok_or(MarkupError::UnexpectedClose { label, offset: pos })?;
                    if expected != label {
                        return Err(MarkupError::Mismatched {
                            expected,
                            found: label,
                            offset: pos,
                        });
                    }
                    if start == cursor {
                        return Err(MarkupError::EmptyEntity { label, offset: pos });
                    }
                    entities.push(EntitySpan::new(start, cursor, label));
                } else {
                    if let Some((outer, _, _)) = open {
                        return Err(MarkupError::Nested {
                            outer,
                            inner: label,
                            offset: pos,
                        });
                    }
                    open = Some((label, cursor, pos));
                }
                pos += close + 1;
            }
            '&' => {
                if rest.starts_with("&lt;") {
                    text.push('<');
                    pos += 4;
                } else if rest.starts_with("&amp;") {
                    text.push('&');
                    pos += 5;
                } else {
                    return Err(MarkupError::InvalidEscape { offset: pos });
                }
                cursor += 1;
            }
            _ => {
                text.push(c);
                cursor += 1;
                pos += c.len_utf8();
            }
        }
    }
    if let Some((label, _, offset)) = open {
        return Err(MarkupError::Unclosed { label, offset });
    }
    Ok(AnnotatedDocument {
        doc_id: String::new(),
        text,
        entities,
        pos_tokens: None,
    })
}

fn escape_into(out: &mut String, c: char) {
    match c {
        '<' => out.push_str("&lt;"),
        '&' => out.push_str("&amp;"),
        _ => out.push(c),
    }
}

/// Inverse of [`parse_annotated_text`]. Fails if the document violates a span invariant.
pub fn serialize_annotated(doc: &AnnotatedDocument) -> Result<String, Error> {
    let violations: Vec<_> = validate_annotations(doc)
        .into_iter()
        .filter(|v| v.kind.is_span_violation())
        .collect();
    if let Some(first) = violations.first() {
        return Err(Error::invalid(format!(
            "cannot serialize {}: {}",
            doc.doc_id, first.message
        )));
    }

    let mut out = String::with_capacity(doc.text.len() + doc.entities.len() * 24);
    let mut spans = doc.entities.iter().peekable();
    let mut current: Option<&EntitySpan> = None;
    for (idx, c) in doc.text.chars().enumerate() {
        if let Some(span) = current.filter(|s| s.end == idx) {
            out.push_str(&format!("</{}>", span.label));
            current = None;
        }
        if let Some(span) = spans.next_if(|s| s.start == idx) {
            out.push_str(&format!("<{}>", span.label));
            current = Some(span);
        }
        escape_into(&mut out, c);
    }
    if let Some(span) = current {
        out.push_str(&format!("</{}>", span.label));
    }
    Ok(out)
}

/// Surfaces of the entities in start order, optionally restricted to one label.
pub fn extract_entities(doc: &AnnotatedDocument, label_filter: Option<EntityLabel>) -> Vec<(String, EntityLabel)> {
    let chars: Vec<char> = doc.text.chars().collect();
    doc.entities
        .iter()
        .filter(|s| label_filter.is_none_or(|l| l == s.label))
        .filter(|s| s.start < s.end && s.end <= chars.len())
        .map(|s| (chars[s.start..s.end].iter().collect(), s.label))
        .collect()
}

// ---------------------------------------------------------------------------
// Wire format and validation
// ---------------------------------------------------------------------------

/// A span as stored on disk: offsets may be out of range and the label may be unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSpan {
    pub start: i64,
    pub end: i64,
    pub label: String,
}

/// One line of an annotated-corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub doc_id: String,
    pub text: String,
    pub entities: Vec<RawSpan>,
    pub pos: Option<Vec<(String, String)>>,
}

impl From<&AnnotatedDocument> for AnnotatedRecord {
    fn from(doc: &AnnotatedDocument) -> Self {
        AnnotatedRecord {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            entities: doc
                .entities
                .iter()
                .map(|s| RawSpan {
                    start: s.start as i64,
                    end: s.end as i64,
                    label: s.label.as_str().to_string(),
                })
                .collect(),
            pos: doc
                .pos_tokens
                .as_ref()
                .map(|ts| ts.iter().map(|t| (t.surface.clone(), t.tag.clone())).collect()),
        }
    }
}

impl TryFrom<AnnotatedRecord> for AnnotatedDocument {
    type Error = Error;

    /// Converts without checking span invariants beyond representability; run
    /// [`validate_record`] for a full report.
    fn try_from(rec: AnnotatedRecord) -> Result<Self, Error> {
        let entities = rec
            .entities
            .iter()
            .map(|s| {
                let label = s.label.parse()?;
                let start =
                    usize::try_from(s.start).map_err(|_| Error::invalid(format!("negative offset {}", s.start)))?;
                let end = usize::try_from(s.end).map_err(|_| Error::invalid(format!("negative offset {}", s.end)))?;
                Ok(EntitySpan { start, end, label })
            })
            .collect::<Result<_, Error>>()?;
        Ok(AnnotatedDocument {
            doc_id: rec.doc_id,
            text: rec.text,
            entities,
            pos_tokens: rec
                .pos
                .map(|ps| ps.into_iter().map(|(surface, tag)| PosToken { surface, tag }).collect()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Overlap,
    OutOfBounds,
    EmptySpan,
    Unsorted,
    UnknownLabel,
    PosMismatch,
    PosUnknownTag,
    PosInvalidSurface,
}

impl ViolationKind {
    fn is_span_violation(&self) -> bool {
        !matches!(
            self,
            ViolationKind::PosMismatch | ViolationKind::PosUnknownTag | ViolationKind::PosInvalidSurface
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Indices into the entity list (or the POS token list for `pos-*` kinds).
    pub indices: Vec<usize>,
    pub message: String,
}

/// Checks span and POS invariants with the default tagset. An empty report means valid.
pub fn validate_annotations(doc: &AnnotatedDocument) -> Vec<Violation> {
    validate_record(&AnnotatedRecord::from(doc), &Tagset::default())
}

/// Checks a stored record: labels, bounds, emptiness, ordering, overlap, and POS consistency.
pub fn validate_record(rec: &AnnotatedRecord, tagset: &Tagset) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = rec.text.chars().count() as i64;

    for (i, s) in rec.entities.iter().enumerate() {
        if s.label.parse::<EntityLabel>().is_err() {
            out.push(Violation {
                kind: ViolationKind::UnknownLabel,
                indices: vec![i],
                message: format!("span {i}: unknown label {}", s.label),
            });
        }
        if s.start < 0 || s.end > len {
            out.push(Violation {
                kind: ViolationKind::OutOfBounds,
                indices: vec![i],
                message: format!("span {i}: [{}, {}) outside text of length {len}", s.start, s.end),
            });
        }
        if s.start >= s.end {
            out.push(Violation {
                kind: ViolationKind::EmptySpan,
                indices: vec![i],
                message: format!("span {i}: start {} is not before end {}", s.start, s.end),
            });
        }
        if i > 0 && s.start < rec.entities[i - 1].start {
            out.push(Violation {
                kind: ViolationKind::Unsorted,
                indices: vec![i - 1, i],
                message: format!("span {i} starts before span {}", i - 1),
            });
        }
    }

    let mut order: Vec<usize> = (0..rec.entities.len()).collect();
    order.sort_by_key(|&i| (rec.entities[i].start, rec.entities[i].end));
    let mut reach: Option<usize> = None; // span with the furthest end seen so far
    for &i in &order {
        let s = &rec.entities[i];
        if let Some(r) = reach {
            let prev = &rec.entities[r];
            if s.start < prev.end && s.start < s.end {
                let (a, b) = (r.min(i), r.max(i));
                out.push(Violation {
                    kind: ViolationKind::Overlap,
                    indices: vec![a, b],
                    message: format!(
                        "spans {a} and {b} overlap: [{}, {}) and [{}, {})",
                        rec.entities[a].start, rec.entities[a].end, rec.entities[b].start, rec.entities[b].end
                    ),
                });
            }
            if s.end > prev.end {
                reach = Some(i);
            }
        } else {
            reach = Some(i);
        }
    }

    if let Some(pos) = &rec.pos {
        for (i, (surface, tag)) in pos.iter().enumerate() {
            if surface.is_empty() || surface.contains('/') || surface.chars().any(char::is_whitespace) {
                out.push(Violation {
                    kind: ViolationKind::PosInvalidSurface,
                    indices: vec![i],
                    message: format!("pos token {i}: invalid surface {surface:?}"),
                });
            }
            if !tagset.contains(tag) {
                out.push(Violation {
                    kind: ViolationKind::PosUnknownTag,
                    indices: vec![i],
                    message: format!("pos token {i}: unknown tag {tag}"),
                });
            }
        }
        let joined: String = pos
            .iter()
            .flat_map(|(s, _)| s.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        let stripped: String = rec.text.chars().filter(|c| !c.is_whitespace()).collect();
        if joined != stripped {
            out.push(Violation {
                kind: ViolationKind::PosMismatch,
                indices: Vec::new(),
                message: "pos surfaces do not reconstruct the text".to_string(),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// POS tagging
// ---------------------------------------------------------------------------

/// Closed set of admissible POS tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagset(BTreeSet<String>);

pub const DEFAULT_TAGS: [&str; 11] = ["n", "v", "a", "d", "p", "m", "q", "r", "c", "u", "w"];

impl Default for Tagset {
    fn default() -> Self {
        Tagset(DEFAULT_TAGS.iter().map(|t| t.to_string()).collect())
    }
}

impl Tagset {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(tags: I) -> Self {
        Tagset(tags.into_iter().map(Into::into).collect())
    }

    /// Whitespace-separated tags; `#` starts a comment that runs to the end of the line.
    pub fn parse(source: &str) -> Self {
        Tagset::new(
            source
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(str::split_whitespace),
        )
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Tagset::parse(&source))
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PosError {
    #[error("token {index} ({token:?}) is not a surface/tag pair")]
    MissingSlash { index: usize, token: String },
    #[error("token {index}: empty surface")]
    EmptySurface { index: usize },
    #[error("token {index}: unknown tag {tag}")]
    UnknownTag { index: usize, tag: String },
}

/// Parses whitespace-separated `surface/tag` pairs.
pub fn parse_pos_line(line: &str, tagset: &Tagset) -> Result<Vec<PosToken>, PosError> {
    line.split_whitespace()
        .enumerate()
        .map(|(index, token)| {
            let (surface, tag) = token.split_once('/').ok_or_else(|| PosError::MissingSlash {
                index,
                token: token.to_string(),
            })?;
            if surface.is_empty() {
                return Err(PosError::EmptySurface { index });
            }
            if !tagset.contains(tag) {
                return Err(PosError::UnknownTag {
                    index,
                    tag: tag.to_string(),
                });
            }
            Ok(PosToken {
                surface: surface.to_string(),
                tag: tag.to_string(),
            })
        })
        .collect()
}

pub fn format_pos_line(tokens: &[PosToken]) -> String {
    tokens
        .iter()
        .map(|t| format!("{}/{}", t.surface, t.tag))
        .collect::<Vec<_>>()
        .join(" ")
}
