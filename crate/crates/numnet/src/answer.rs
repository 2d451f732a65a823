//! Weak-supervision candidate enumeration and greedy decoding.
//!
//! Training never sees answer-type labels. Instead, every gold-consistent
//! candidate is enumerated per example: passage/question token ranges whose
//! normalized text matches a gold string, count classes for integral golds
//! in 0..=9, and signed-sum assignments over the passage numbers (plus an
//! optional appended 100) that hit a gold number. Decoding greedily picks
//! the most probable feasible answer type and then the best candidate of
//! that type.

use crate::diffcore::Real;
use crate::graph::NumGraph;
use crate::metrics::normalize_answer;
use crate::model::HeadOutputs;
use crate::textnum::{detokenize, parse_number, DropExample, Token};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("empty supervision set")]
    EmptySupervision,
}

/// The four answer types, in the fixed head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerType {
    PassageSpan,
    QuestionSpan,
    Count,
    Arithmetic,
}

impl AnswerType {
    pub const ALL: [AnswerType; 4] = [
        AnswerType::PassageSpan,
        AnswerType::QuestionSpan,
        AnswerType::Count,
        AnswerType::Arithmetic,
    ];

    pub fn index(self) -> usize {
        match self {
            AnswerType::PassageSpan => 0,
            AnswerType::QuestionSpan => 1,
            AnswerType::Count => 2,
            AnswerType::Arithmetic => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnswerType::PassageSpan => "passage_span",
            AnswerType::QuestionSpan => "question_span",
            AnswerType::Count => "count",
            AnswerType::Arithmetic => "arithmetic",
        }
    }
}

/// Sign classes for arithmetic rows, in head column order.
pub const SIGN_VALUES: [i8; 3] = [0, 1, -1];

#[derive(Debug, Clone, Copy)]
pub struct SupervisionConfig {
    /// Cap on nonzero signs per arithmetic assignment.
    pub max_nonzero_signs: usize,
    /// Whether a virtual 100 is appended after the passage numbers.
    pub append_hundred: bool,
    /// Maximum candidate span length in tokens.
    pub max_span_len: usize,
    /// Tolerance for matching a signed sum against a gold number.
    pub sum_tolerance: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            max_nonzero_signs: 3,
            append_hundred: true,
            max_span_len: 8,
            sum_tolerance: 1e-5,
        }
    }
}

/// All gold-consistent candidates of one example, grouped by answer type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupervisionSet {
    /// Inclusive (start, end) token ranges in the passage.
    pub passage_spans: Vec<(usize, usize)>,
    /// Inclusive (start, end) token ranges in the question.
    pub question_spans: Vec<(usize, usize)>,
    /// Count classes consistent with a gold number.
    pub counts: Vec<u8>,
    /// Sign vectors over passage numbers (+ appended 100 last), entries in
    /// {0, +1, -1}; never all zero.
    pub sign_assignments: Vec<Vec<i8>>,
}

impl SupervisionSet {
    pub fn is_empty(&self) -> bool {
        self.passage_spans.is_empty()
            && self.question_spans.is_empty()
            && self.counts.is_empty()
            && self.sign_assignments.is_empty()
    }
}

/// Render a value the way DROP gold number strings are written: integral
/// values without a decimal point, otherwise at most six decimal places
/// with trailing zeros trimmed; negative zero collapses to "0".
pub fn format_number(x: f64) -> String {
    debug_assert!(x.is_finite());
    let x = if x == 0.0 { 0.0 } else { x };
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// The arithmetic value universe of an example: passage number values in
/// token order, with 100 appended when enabled.
pub fn arithmetic_values(example: &DropExample, append_hundred: bool) -> Vec<f64> {
    let mut values: Vec<f64> = example.passage_numbers.iter().map(|n| n.value).collect();
    if append_hundred {
        values.push(100.0);
    }
    values
}

/// Enumerate every gold-consistent candidate for a (trimmed) example.
pub fn enumerate_supervision(example: &DropExample, config: &SupervisionConfig) -> SupervisionSet {
    let gold_texts: Vec<String> = example
        .gold_answers
        .iter()
        .flat_map(|g| g.texts().into_iter().map(str::to_string))
        .collect();
    let gold_numbers: Vec<f64> = example
        .gold_answers
        .iter()
        .filter_map(|g| g.number.as_deref().and_then(parse_number))
        .collect();

    let passage_spans = matching_spans(&example.passage_tokens, &gold_texts, config.max_span_len);
    let question_spans = matching_spans(&example.question_tokens, &gold_texts, config.max_span_len);

    let mut counts: Vec<u8> = gold_numbers
        .iter()
        .filter(|v| v.fract() == 0.0 && (0.0..=9.0).contains(*v))
        .map(|v| *v as u8)
        .collect();
    counts.sort_unstable();
    counts.dedup();

    let values = arithmetic_values(example, config.append_hundred);
    let sign_assignments = enumerate_sign_assignments(
        &values,
        &gold_numbers,
        config.max_nonzero_signs,
        config.sum_tolerance,
    );

    SupervisionSet {
        passage_spans,
        question_spans,
        counts,
        sign_assignments,
    }
}

/// All token ranges (inclusive, length <= max_len) whose normalized text
/// equals a normalized gold string.
fn matching_spans(tokens: &[Token], gold_texts: &[String], max_len: usize) -> Vec<(usize, usize)> {
    let targets: Vec<Vec<String>> = gold_texts
        .iter()
        .map(|g| normalize_answer(g))
        .filter(|t| !t.is_empty())
        .collect();
    if targets.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for s in 0..tokens.len() {
        for e in s..tokens.len().min(s + max_len) {
            let text = detokenize(&tokens[s..=e]);
            let norm = normalize_answer(&text);
            if norm.is_empty() {
                continue;
            }
            if targets.iter().any(|t| *t == norm) {
                out.push((s, e));
            }
        }
    }
    out
}

/// All sign vectors with 1..=max_nonzero nonzero entries whose signed sum
/// hits a gold number within tolerance. Deterministic order: by nonzero
/// count, then index combination, then sign pattern.
pub fn enumerate_sign_assignments(
    values: &[f64],
    gold_numbers: &[f64],
    max_nonzero: usize,
    tolerance: f64,
) -> Vec<Vec<i8>> {
    let n = values.len();
    let mut out = Vec::new();
    if n == 0 || gold_numbers.is_empty() {
        return out;
    }
    for k in 1..=max_nonzero.min(n) {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            for pattern in 0u32..(1 << k) {
                let mut sum = 0.0;
                for (bit, &idx) in combo.iter().enumerate() {
                    if pattern & (1 << bit) == 0 {
                        sum += values[idx];
                    } else {
                        sum -= values[idx];
                    }
                }
                if gold_numbers.iter().any(|g| (g - sum).abs() <= tolerance) {
                    let mut signs = vec![0i8; n];
                    for (bit, &idx) in combo.iter().enumerate() {
                        signs[idx] = if pattern & (1 << bit) == 0 { 1 } else { -1 };
                    }
                    out.push(signs);
                }
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    out
}

/// Advance `combo` to the next k-combination of 0..n in lexicographic
/// order; false when exhausted.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Structured payload of a decoded answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Span {
        start: usize,
        end: usize,
    },
    Count {
        value: u8,
    },
    Arithmetic {
        signs: Vec<i8>,
        values: Vec<f64>,
        total: f64,
    },
}

/// A decoded answer: type, rendered text, and the structured payload the
/// text was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_type: AnswerType,
    pub text: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub max_span_len: usize,
    pub append_hundred: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_span_len: 8,
            append_hundred: true,
        }
    }
}

/// Greedy decoding: pick the most probable feasible answer type, then the
/// best candidate of that type. Span search maximizes start*end probability
/// over ranges of length <= max_span_len, ties broken by smallest start
/// then smallest end.
pub fn decode<S: Real>(
    outputs: &HeadOutputs<S>,
    example: &DropExample,
    _graph: &NumGraph,
    config: &DecodeConfig,
) -> Prediction {
    let mut best_type: Option<(AnswerType, f64)> = None;
    for ty in AnswerType::ALL {
        if !outputs.feasible[ty.index()] {
            continue;
        }
        let p = outputs.type_probs.get(0, ty.index()).as_f64();
        if best_type.map_or(true, |(_, bp)| p > bp) {
            best_type = Some((ty, p));
        }
    }
    let (answer_type, _) = best_type.expect("at least one feasible answer type");

    match answer_type {
        AnswerType::PassageSpan => {
            let (s, e) = best_span(&outputs.p_start, &outputs.p_end, config.max_span_len);
            Prediction {
                answer_type,
                text: span_text(&example.passage_text, &example.passage_tokens, s, e),
                payload: Payload::Span { start: s, end: e },
            }
        }
        AnswerType::QuestionSpan => {
            let (s, e) = best_span(&outputs.q_start, &outputs.q_end, config.max_span_len);
            Prediction {
                answer_type,
                text: span_text(&example.question_text, &example.question_tokens, s, e),
                payload: Payload::Span { start: s, end: e },
            }
        }
        AnswerType::Count => {
            let mut best = 0usize;
            for j in 1..outputs.count_probs.cols() {
                if outputs.count_probs.get(0, j) > outputs.count_probs.get(0, best) {
                    best = j;
                }
            }
            Prediction {
                answer_type,
                text: format!("{best}"),
                payload: Payload::Count { value: best as u8 },
            }
        }
        AnswerType::Arithmetic => {
            let values = arithmetic_values(example, config.append_hundred);
            debug_assert_eq!(values.len(), outputs.sign_probs.rows());
            let mut signs = Vec::with_capacity(values.len());
            let mut total = 0.0;
            for r in 0..outputs.sign_probs.rows() {
                let mut best = 0usize;
                for j in 1..3 {
                    if outputs.sign_probs.get(r, j) > outputs.sign_probs.get(r, best) {
                        best = j;
                    }
                }
                let sign = SIGN_VALUES[best];
                signs.push(sign);
                total += sign as f64 * values[r];
            }
            Prediction {
                answer_type,
                text: format_number(total),
                payload: Payload::Arithmetic {
                    signs,
                    values,
                    total,
                },
            }
        }
    }
}

/// Exact search over spans of length <= max_len, maximizing
/// p_start[s] * p_end[e]; first-visited wins ties (smallest s, then e).
fn best_span<S: Real>(p_start: &crate::diffcore::Tensor<S>, p_end: &crate::diffcore::Tensor<S>, max_len: usize) -> (usize, usize) {
    let n = p_start.cols();
    let mut best = (0usize, 0usize);
    let mut best_p = f64::NEG_INFINITY;
    for s in 0..n {
        let ps = p_start.get(0, s).as_f64();
        for e in s..n.min(s + max_len) {
            let p = ps * p_end.get(0, e).as_f64();
            if p > best_p {
                best_p = p;
                best = (s, e);
            }
        }
    }
    best
}

fn span_text(source: &str, tokens: &[Token], s: usize, e: usize) -> String {
    if tokens.is_empty() {
        return String::new();
    }
    let s = s.min(tokens.len() - 1);
    let e = e.min(tokens.len() - 1).max(s);
    source[tokens[s].char_start..tokens[e].char_end].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textnum::{make_example, GoldAnswer};

    fn gold_number(n: &str) -> GoldAnswer {
        GoldAnswer {
            number: Some(n.to_string()),
            spans: vec![],
            unsupported_date: false,
        }
    }

    fn gold_span(s: &str) -> GoldAnswer {
        GoldAnswer {
            number: None,
            spans: vec![s.to_string()],
            unsupported_date: false,
        }
    }

    #[test]
    fn format_number_cases() {
        assert_eq!(format_number(4.0), "4");
        assert_eq!(format_number(6.3), "6.3");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-4.5), "-4.5");
        assert_eq!(format_number(7791.0), "7791");
        assert_eq!(format_number(0.1 + 0.2), "0.3");
    }

    #[test]
    fn sign_assignment_26_minus_22() {
        let ex = make_example(
            "p",
            "q",
            "a 26 yard goal then a 22 yard goal then a 19 yard goal",
            "How many more yards was the longest over the second longest?",
            vec![gold_number("4")],
        );
        let sup = enumerate_supervision(&ex, &SupervisionConfig::default());
        // Passage values are [26, 22, 19, 100-appended].
        assert!(sup.sign_assignments.contains(&vec![1, -1, 0, 0]));
        for a in &sup.sign_assignments {
            assert!(a.iter().any(|&s| s != 0));
            let values = arithmetic_values(&ex, true);
            let sum: f64 = a
                .iter()
                .zip(values.iter())
                .map(|(&s, &v)| s as f64 * v)
                .sum();
            assert!((sum - 4.0).abs() <= 1e-5);
        }
        // Gold 4 is also a count candidate.
        assert_eq!(sup.counts, vec![4]);
    }

    #[test]
    fn sign_assignment_hundred_minus_25() {
        let ex = make_example(
            "p",
            "q",
            "about 25 percent were American",
            "How many percent were not American?",
            vec![gold_number("75")],
        );
        let sup = enumerate_supervision(&ex, &SupervisionConfig::default());
        // Values are [25, 100-appended]: expect -25 +100.
        assert!(sup.sign_assignments.contains(&vec![-1, 1]));
        let no_hundred = enumerate_supervision(
            &ex,
            &SupervisionConfig {
                append_hundred: false,
                ..SupervisionConfig::default()
            },
        );
        assert!(no_hundred.sign_assignments.is_empty());
    }

    #[test]
    fn single_span_match() {
        let ex = make_example(
            "p",
            "q",
            "In the census 32% were Germans and 12% were English.",
            "Which group is bigger: Germans or English?",
            vec![gold_span("Germans")],
        );
        let sup = enumerate_supervision(&ex, &SupervisionConfig::default());
        assert_eq!(sup.passage_spans.len(), 1);
        assert!(sup.counts.is_empty());
        assert!(sup.sign_assignments.is_empty());
        let (s, e) = sup.passage_spans[0];
        assert_eq!(detokenize(&ex.passage_tokens[s..=e]), "Germans");
        // The question contains "Germans" too; the ": Germans" range also
        // matches because normalization strips punctuation.
        assert!(!sup.question_spans.is_empty());
        for &(s, e) in &sup.question_spans {
            let text = detokenize(&ex.question_tokens[s..=e]);
            assert_eq!(crate::metrics::normalize_answer(&text), vec!["germans"]);
        }
    }

    #[test]
    fn all_zero_assignment_excluded_for_gold_zero() {
        let values = vec![3.0, 3.0];
        let assignments = enumerate_sign_assignments(&values, &[0.0], 3, 1e-5);
        // +3 -3 and -3 +3 qualify; the empty assignment does not.
        assert_eq!(assignments.len(), 2);
        for a in &assignments {
            assert!(a.iter().any(|&s| s != 0));
        }
    }

    #[test]
    fn exhaustive_oracle_small() {
        // Brute force over all 3^n sign vectors must agree with the capped
        // enumerator for n <= 6.
        let mut rng = crate::rng::RngStream::new(17, "test", 0);
        for _ in 0..50 {
            let n = 1 + rng.below(6);
            let values: Vec<f64> = (0..n).map(|_| rng.range(1, 50) as f64).collect();
            let gold = rng.range(-60, 120) as f64;
            let fast = enumerate_sign_assignments(&values, &[gold], 3, 1e-5);
            let mut slow = Vec::new();
            let mut vec3 = vec![0i8; n];
            brute(&values, gold, 0, &mut vec3, &mut slow);
            let mut a = fast.clone();
            let mut b = slow.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b, "values {values:?} gold {gold}");
        }
    }

    fn brute(values: &[f64], gold: f64, i: usize, cur: &mut Vec<i8>, out: &mut Vec<Vec<i8>>) {
        if i == values.len() {
            let nz = cur.iter().filter(|&&s| s != 0).count();
            if nz >= 1 && nz <= 3 {
                let sum: f64 = cur
                    .iter()
                    .zip(values.iter())
                    .map(|(&s, &v)| s as f64 * v)
                    .sum();
                if (sum - gold).abs() <= 1e-5 {
                    out.push(cur.clone());
                }
            }
            return;
        }
        for s in [0i8, 1, -1] {
            cur[i] = s;
            brute(values, gold, i + 1, cur, out);
        }
        cur[i] = 0;
    }

    #[test]
    fn enumeration_runtime_forty_numbers() {
        let values: Vec<f64> = (1..=40).map(|v| v as f64).collect();
        let start = std::time::Instant::now();
        let got = enumerate_sign_assignments(&values, &[7.0], 3, 1e-5);
        assert!(!got.is_empty());
        assert!(start.elapsed().as_secs_f64() < 1.0, "took {:?}", start.elapsed());
    }
}
