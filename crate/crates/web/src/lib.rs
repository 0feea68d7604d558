//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no generated TypeScript types.
//! Errors come back as `{"error": "..."}` instead of exceptions.

use forge_core::annotation::{extract_entities, parse_annotated_text, validate_record, AnnotatedRecord, Tagset};
use forge_core::corpus::{clean_text, count_tokens};
use forge_core::metrics::{score_pair, TokenMode, REPORT_COLUMNS};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

/// Scores one candidate against one reference. `mode` is `"char"` or `"whitespace"`.
#[wasm_bindgen]
pub fn score(candidate: &str, reference: &str, mode: &str) -> String {
    let mode: TokenMode = match mode.parse() {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let report = score_pair(candidate, reference, mode);
    let rows: Vec<Value> = REPORT_COLUMNS
        .iter()
        .zip(report.scores())
        .zip(report.rendered())
        .map(|((name, value), shown)| json!({ "metric": name, "value": value, "shown": shown }))
        .collect();
    json!({ "mode": mode, "scores": rows }).to_string()
}

/// Parses inline `<ICH-*>` markup into plain text, spans and surface strings.
#[wasm_bindgen]
pub fn parse_markup(markup: &str) -> String {
    let doc = match parse_annotated_text(markup) {
        Ok(d) => d,
        Err(e) => return error(e),
    };
    let violations = validate_record(&AnnotatedRecord::from(&doc), &Tagset::default());
    let surfaces: Vec<String> = extract_entities(&doc, None).into_iter().map(|(s, _)| s).collect();
    let entities: Vec<Value> = doc
        .entities
        .iter()
        .zip(surfaces)
        .map(|(span, surface)| json!({ "start": span.start, "end": span.end, "label": span.label, "surface": surface }))
        .collect();
    json!({ "text": doc.text, "entities": entities, "violations": violations.len() }).to_string()
}

/// Normalizes raw text the way corpus ingestion does and counts its tokens.
#[wasm_bindgen]
pub fn clean(raw: &str) -> String {
    let cleaned = clean_text(raw);
    json!({
        "cleaned": cleaned,
        "tokens_before": count_tokens(raw),
        "tokens_after": count_tokens(&cleaned),
    })
    .to_string()
}
