//! DROP JSON ingestion and emission.
//!
//! The file format is a top-level object mapping passage_id to
//! `{ "passage": string, "qa_pairs": [ { "question", "query_id", "answer",
//! "validated_answers"? } ] }` where an answer object carries `"number"`
//! (string), `"spans"` (string list) and `"date"` ({day, month, year}).
//! The gold set of an example is its "answer" plus all "validated_answers".

use super::{make_example, Corpus, GoldAnswer, Split, TextError};
use serde_json::{json, Map, Value};

/// Parse a DROP-format JSON byte stream into a corpus. Examples appear in
/// file order (passages in object order, questions in list order).
pub fn load_drop_json(bytes: &[u8], split: Split) -> Result<Corpus, TextError> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| {
        let offset = byte_offset(bytes, e.line(), e.column());
        TextError::Parse(format!("malformed JSON at byte {offset}: {e}"))
    })?;
    let obj = root
        .as_object()
        .ok_or_else(|| TextError::Parse("top level must be an object".into()))?;

    let mut examples = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (passage_id, entry) in obj {
        let passage = require_str(entry, "passage", passage_id)?;
        if passage.trim().is_empty() {
            return Err(TextError::Invalid(format!(
                "empty passage in '{passage_id}'"
            )));
        }
        let qa_pairs = entry
            .get("qa_pairs")
            .and_then(Value::as_array)
            .ok_or_else(|| TextError::Schema {
                key: "qa_pairs".into(),
                passage_id: passage_id.clone(),
            })?;
        for qa in qa_pairs {
            let question = require_str(qa, "question", passage_id)?;
            if question.trim().is_empty() {
                return Err(TextError::Invalid(format!(
                    "empty question in '{passage_id}'"
                )));
            }
            let query_id = require_str(qa, "query_id", passage_id)?;
            if !seen_ids.insert(query_id.to_string()) {
                return Err(TextError::Invalid(format!(
                    "duplicate query_id '{query_id}'"
                )));
            }
            let mut golds = Vec::new();
            if let Some(ans) = qa.get("answer") {
                if let Some(g) = parse_answer(ans) {
                    golds.push(g);
                }
            }
            if let Some(validated) = qa.get("validated_answers").and_then(Value::as_array) {
                for ans in validated {
                    if let Some(g) = parse_answer(ans) {
                        golds.push(g);
                    }
                }
            }
            examples.push(make_example(passage_id, query_id, passage, question, golds));
        }
    }
    Ok(Corpus { examples, split })
}

fn require_str<'a>(v: &'a Value, key: &str, passage_id: &str) -> Result<&'a str, TextError> {
    v.get(key).and_then(Value::as_str).ok_or_else(|| TextError::Schema {
        key: key.into(),
        passage_id: passage_id.into(),
    })
}

/// Normalize one DROP answer object. Returns `None` when the record is
/// entirely empty (DROP uses empty strings and lists as "absent").
fn parse_answer(ans: &Value) -> Option<GoldAnswer> {
    let number = ans
        .get("number")
        .and_then(|n| match n {
            Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Value::Number(x) => Some(x.to_string()),
            _ => None,
        });
    let mut spans: Vec<String> = ans
        .get("spans")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().to_string())
                .collect()
        })
        .unwrap_or_default();
    let mut unsupported_date = false;
    if number.is_none() && spans.is_empty() {
        if let Some(date) = ans.get("date").and_then(Value::as_object) {
            let rendered = render_date(date);
            if !rendered.is_empty() {
                spans.push(rendered);
                unsupported_date = true;
            }
        }
    }
    if number.is_none() && spans.is_empty() {
        return None;
    }
    Some(GoldAnswer {
        number,
        spans,
        unsupported_date,
    })
}

fn render_date(date: &Map<String, Value>) -> String {
    ["day", "month", "year"]
        .iter()
        .filter_map(|k| date.get(*k).and_then(Value::as_str))
        .filter(|s| !s.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serialize a corpus back to DROP-format JSON bytes. The first gold answer
/// becomes "answer", the rest "validated_answers"; output is deterministic.
pub fn save_drop_json(corpus: &Corpus) -> Vec<u8> {
    let mut root = Map::new();
    for ex in &corpus.examples {
        let qa = json!({
            "question": ex.question_text,
            "query_id": ex.query_id,
            "answer": answer_json(ex.gold_answers.first()),
            "validated_answers": ex.gold_answers.iter().skip(1).map(|g| answer_json(Some(g))).collect::<Vec<_>>(),
        });
        match root.get_mut(&ex.passage_id) {
            Some(entry) => {
                entry["qa_pairs"].as_array_mut().unwrap().push(qa);
            }
            None => {
                root.insert(
                    ex.passage_id.clone(),
                    json!({ "passage": ex.passage_text, "qa_pairs": [qa] }),
                );
            }
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(root)).expect("corpus serializes");
    bytes.push(b'\n');
    bytes
}

fn answer_json(gold: Option<&GoldAnswer>) -> Value {
    match gold {
        Some(g) => json!({
            "number": g.number.clone().unwrap_or_default(),
            "spans": g.spans,
            "date": {"day": "", "month": "", "year": ""},
        }),
        None => json!({
            "number": "",
            "spans": [],
            "date": {"day": "", "month": "", "year": ""},
        }),
    }
}

/// Translate serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut seen_lines = 1;
    let mut line_start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if seen_lines == line {
            line_start = if line == 1 { 0 } else { i };
            break;
        }
        if b == b'\n' {
            seen_lines += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(bytes.len())
}
