//! Tokenization, number extraction, DROP-format ingestion, trimming, and
//! comparing-question augmentation.
//!
//! The tokenizer is digit-aware: comma-grouped integers ("7,791") and
//! decimals ("6.3") survive as single tokens, while punctuation (including
//! the hyphen of "47-yard" and a trailing "%") always splits off. Number
//! extraction then parses those digit tokens into [`NumberOccurrence`]
//! records, one per textual occurrence.

mod drop_json;

pub use drop_json::{load_drop_json, save_drop_json};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("{0}")]
    Parse(String),
    #[error("missing key '{key}' in passage '{passage_id}'")]
    Schema { key: String, passage_id: String },
    #[error("{0}")]
    Invalid(String),
}

/// Where a token or number occurrence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Question,
    Passage,
}

/// One token of a source text. Offsets are byte offsets so that
/// `text[char_start..char_end]` is exactly the token surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// One numeric token occurrence: its parsed value, the index of the token
/// that carries it, and which side of the example it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberOccurrence {
    pub value: f64,
    pub token_index: usize,
    pub source: Source,
}

/// A normalized gold answer record: an optional number string plus a list
/// of span strings. Date-typed answers are carried as their rendered span
/// string but flagged unsupported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub number: Option<String>,
    pub spans: Vec<String>,
    #[serde(default)]
    pub unsupported_date: bool,
}

impl GoldAnswer {
    pub fn is_empty(&self) -> bool {
        self.number.is_none() && self.spans.is_empty()
    }

    /// All answer strings this record accepts (the number string plus every
    /// span string).
    pub fn texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        if let Some(n) = &self.number {
            out.push(n.as_str());
        }
        out.extend(self.spans.iter().map(|s| s.as_str()));
        out
    }
}

/// One question over one passage, fully preprocessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropExample {
    pub passage_id: String,
    pub query_id: String,
    pub passage_text: String,
    pub question_text: String,
    pub passage_tokens: Vec<Token>,
    pub question_tokens: Vec<Token>,
    pub passage_numbers: Vec<NumberOccurrence>,
    pub question_numbers: Vec<NumberOccurrence>,
    pub gold_answers: Vec<GoldAnswer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<DropExample>,
    pub split: Split,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn find(&self, query_id: &str) -> Option<&DropExample> {
        self.examples.iter().find(|e| e.query_id == query_id)
    }
}

/// Build an example from raw strings, running tokenization and number
/// extraction on both sides.
pub fn make_example(
    passage_id: &str,
    query_id: &str,
    passage: &str,
    question: &str,
    gold_answers: Vec<GoldAnswer>,
) -> DropExample {
    let passage_tokens = tokenize(passage);
    let question_tokens = tokenize(question);
    let passage_numbers = extract_numbers(&passage_tokens, Source::Passage);
    let question_numbers = extract_numbers(&question_tokens, Source::Question);
    DropExample {
        passage_id: passage_id.to_string(),
        query_id: query_id.to_string(),
        passage_text: passage.to_string(),
        question_text: question.to_string(),
        passage_tokens,
        question_tokens,
        passage_numbers,
        question_numbers,
        gold_answers,
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

/// Deterministic whitespace-and-punctuation tokenizer.
///
/// Letters run together, digit runs keep comma groups of three and decimal
/// parts, and every other non-whitespace character becomes its own token.
/// "a 47-yard field goal" therefore yields `a / 47 / - / yard / field /
/// goal`, and "6.3%" yields `6.3 / %`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_word_char(c) {
            let mut j = i + 1;
            while j < chars.len() && is_word_char(chars[j].1) {
                j += 1;
            }
            let end = byte_end(bytes, &chars, j);
            tokens.push(Token {
                text: text[start..end].to_string(),
                char_start: start,
                char_end: end,
            });
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i + 1;
            loop {
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
                // A comma stays inside the token only when it introduces a
                // group of exactly three digits not followed by more digits.
                if j < chars.len() && chars[j].1 == ',' && digit_group_of_three(&chars, j) {
                    j += 1;
                    continue;
                }
                break;
            }
            // Decimal part: a dot directly followed by at least one digit.
            if j < chars.len() && chars[j].1 == '.' && j + 1 < chars.len() && chars[j + 1].1.is_ascii_digit() {
                j += 2;
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
            }
            let end = byte_end(bytes, &chars, j);
            tokens.push(Token {
                text: text[start..end].to_string(),
                char_start: start,
                char_end: end,
            });
            i = j;
            continue;
        }
        // Everything else is a single-character token.
        let end = byte_end(bytes, &chars, i + 1);
        tokens.push(Token {
            text: text[start..end].to_string(),
            char_start: start,
            char_end: end,
        });
        i += 1;
    }
    tokens
}

fn byte_end(bytes: &[u8], chars: &[(usize, char)], char_pos: usize) -> usize {
    if char_pos < chars.len() {
        chars[char_pos].0
    } else {
        bytes.len()
    }
}

/// True when `chars[comma_pos]` is a comma followed by exactly three digits
/// that are not themselves followed by another digit.
fn digit_group_of_three(chars: &[(usize, char)], comma_pos: usize) -> bool {
    let mut k = comma_pos + 1;
    let mut digits = 0;
    while k < chars.len() && chars[k].1.is_ascii_digit() {
        digits += 1;
        k += 1;
        if digits > 3 {
            return false;
        }
    }
    digits == 3
}

/// Parse a token text as a number under the digit grammar: optional sign,
/// either a plain digit run or comma groups of three, optional decimal part.
/// Returns `None` for anything else.
pub fn parse_number(text: &str) -> Option<f64> {
    let mut s = text;
    let mut neg = false;
    if let Some(rest) = s.strip_prefix('-') {
        neg = true;
        s = rest;
    } else if let Some(rest) = s.strip_prefix('+') {
        s = rest;
    }
    if s.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let digits: String = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        if groups.len() < 2 || groups[0].is_empty() || groups[0].len() > 3 {
            return None;
        }
        if !groups[0].bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        for g in &groups[1..] {
            if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
        }
        groups.concat()
    } else {
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        int_part.to_string()
    };
    let joined = match frac_part {
        Some(f) => format!("{digits}.{f}"),
        None => digits,
    };
    let v: f64 = joined.parse().ok()?;
    let v = if neg { -v } else { v };
    v.is_finite().then_some(v)
}

/// Extract every parseable numeric token, in token order. A "%" after a
/// number leaves the face value untouched (6.3, not 0.063).
pub fn extract_numbers(tokens: &[Token], source: Source) -> Vec<NumberOccurrence> {
    tokens
        .iter()
        .enumerate()
        .filter_map(|(idx, t)| {
            parse_number(&t.text).map(|value| NumberOccurrence {
                value,
                token_index: idx,
                source,
            })
        })
        .collect()
}

/// Keep the first `passage_limit` passage tokens and `question_limit`
/// question tokens, dropping number occurrences that fall outside. Gold
/// answers are untouched.
pub fn trim(example: &DropExample, passage_limit: usize, question_limit: usize) -> DropExample {
    assert!(passage_limit >= 1 && question_limit >= 1, "trim limits must be >= 1");
    let mut out = example.clone();
    if out.passage_tokens.len() > passage_limit {
        out.passage_tokens.truncate(passage_limit);
        out.passage_numbers.retain(|n| n.token_index < passage_limit);
    }
    if out.question_tokens.len() > question_limit {
        out.question_tokens.truncate(question_limit);
        out.question_numbers.retain(|n| n.token_index < question_limit);
    }
    out
}

/// Reconstruct the surface form of a token range using byte offsets:
/// adjacent tokens are joined without a space, separated tokens with one.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && t.char_start > tokens[i - 1].char_end {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

/// The two candidate spans of a comparing question, as inclusive token
/// ranges into the question token list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonMatch {
    pub a_start: usize,
    pub a_end: usize,
    pub b_start: usize,
    pub b_end: usize,
}

fn is_punct_token(t: &Token) -> bool {
    !t.text.chars().any(|c| c.is_alphanumeric())
}

fn is_or(t: &Token) -> bool {
    t.text.eq_ignore_ascii_case("or")
}

/// Detect the question-final "<A> or <B>?" pattern: B is the 1-5 token span
/// between the last "or" and the trailing "?", and A is the 1-5 token span
/// between the nearest preceding delimiter (any punctuation token, another
/// "or", or the question start) and that "or". Neither span may contain
/// "or".
pub fn find_comparison(tokens: &[Token]) -> Option<ComparisonMatch> {
    if tokens.len() < 4 {
        return None;
    }
    let qmark = tokens.len() - 1;
    if tokens[qmark].text != "?" {
        return None;
    }
    let or_pos = (0..qmark).rev().find(|&i| is_or(&tokens[i]))?;
    let b_start = or_pos + 1;
    let b_end = qmark - 1;
    if b_start > b_end || b_end - b_start + 1 > 5 {
        return None;
    }
    if tokens[b_start..=b_end].iter().any(is_or) {
        return None;
    }
    if or_pos == 0 {
        return None;
    }
    let mut a_start = or_pos;
    while a_start > 0 {
        let prev = &tokens[a_start - 1];
        if is_punct_token(prev) || is_or(prev) {
            break;
        }
        a_start -= 1;
    }
    let a_end = or_pos - 1;
    if a_start > a_end || a_end - a_start + 1 > 5 {
        return None;
    }
    Some(ComparisonMatch {
        a_start,
        a_end,
        b_start,
        b_end,
    })
}

/// Swap the two candidate spans of a comparison match inside the raw
/// question text, returning the new question string.
fn swap_candidates(question: &str, tokens: &[Token], m: &ComparisonMatch) -> String {
    let a0 = tokens[m.a_start].char_start;
    let a1 = tokens[m.a_end].char_end;
    let b0 = tokens[m.b_start].char_start;
    let b1 = tokens[m.b_end].char_end;
    let mut out = String::with_capacity(question.len());
    out.push_str(&question[..a0]);
    out.push_str(&question[b0..b1]);
    out.push_str(&question[a1..b0]);
    out.push_str(&question[a0..a1]);
    out.push_str(&question[b1..]);
    out
}

/// For every question matching the comparing pattern, add a copy with the
/// two candidates swapped. The swapped example keeps the passage and gold
/// answers byte-identical and gets query_id `<original>#swap`. Originals
/// are retained; output order is original file order with each swap
/// directly after its source.
pub fn augment_comparisons(corpus: &Corpus, _seed: u64) -> Corpus {
    let mut examples = Vec::with_capacity(corpus.examples.len());
    for ex in &corpus.examples {
        examples.push(ex.clone());
        if let Some(m) = find_comparison(&ex.question_tokens) {
            let new_question = swap_candidates(&ex.question_text, &ex.question_tokens, &m);
            let mut swapped = make_example(
                &ex.passage_id,
                &format!("{}#swap", ex.query_id),
                &ex.passage_text,
                &new_question,
                ex.gold_answers.clone(),
            );
            swapped.passage_text = ex.passage_text.clone();
            examples.push(swapped);
        }
    }
    Corpus {
        examples,
        split: corpus.split,
    }
}
